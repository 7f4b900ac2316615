//! The comparison path: delay removal by first-order Padé approximation and
//! indirect controller discretization by the trapezoidal (Tustin) rule.
//!
//! This is the conventional design route the delay-aware machinery is
//! measured against. It makes two deliberate simplifications:
//!
//! 1. [`pade_augment`] replaces the transport delay `e^{−sτ(ρ)}` acting on
//!    each delayed state channel by the first-order all-pass factor
//!    `(1 − τs/2)/(1 + τs/2)`, realized as one extra state per channel. The
//!    result has no delayed term at all.
//! 2. [`tustin_discretize`] turns a continuous controller into a discrete
//!    one by the bilinear map, *folding the delayed and sampled-state terms
//!    into the instantaneous dynamics* as if their arguments were current.
//!    Nothing about the sampled-data structure survives; this is exactly the
//!    indirect design whose stability degrades as the sampling interval
//!    grows, which the comparison runs are meant to expose.
//!
//! Per-channel Padé realization: the filtered copy `v_j ≈ x_j(t − τ)` obeys
//!
//! ```text
//! ẋ_p,j = −(2/τ) x_p,j + x_j,        v_j = (4/τ) x_p,j − x_j,
//! ```
//!
//! whose transfer function is `(2/τ − s)/(2/τ + s)`, the first-order Padé
//! factor. Substituting `v` for the delayed argument and stacking `x_p`
//! under the plant state gives a delay-free system whose zero-frequency
//! behavior matches the original exactly.

use crate::lpv::{AffineMatrixFn, LpvDelayPlant};
use crate::realize::{realize, ContinuousController, DigitalTaps};
use crate::sim::SampledController;
use crate::synthesis::SynthesisCertificate;
use crate::{Error, Mat, Result};

/// A delay-free stand-in for a delayed plant: one extra filter state per
/// delayed channel, no delayed term left. Evaluation is pointwise in the
/// scheduling parameter because the Padé coefficients `2/τ(ρ)` are not
/// affine in `ρ` even when the plant data is.
#[derive(Clone, Debug)]
pub struct PadeAugmentedPlant {
    source: LpvDelayPlant,
    order: usize,
    delayed: Vec<usize>,
}

/// The augmented plant frozen at one scheduling value. There is no delayed
/// state matrix by construction.
#[derive(Clone, Debug)]
pub struct PadeAtRho {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub d11: Mat,
    pub d12: Mat,
    pub c2: Mat,
    /// The delay value the Padé factors were built from.
    pub tau: f64,
}

/// Columns through which the delayed state actually enters the dynamics or
/// the performance output, over the whole affine family.
fn delayed_channels(plant: &LpvDelayPlant) -> Vec<usize> {
    let n = plant.a.rows();
    let col_active = |f: &AffineMatrixFn, j: usize| {
        f.base().column(j).iter().any(|v| *v != 0.0)
            || (0..f.n_params()).any(|i| f.coeff(i).column(j).iter().any(|v| *v != 0.0))
    };
    (0..n)
        .filter(|&j| col_active(&plant.a_tau, j) || col_active(&plant.c1_tau, j))
        .collect()
}

/// Replace the state delay by first-order Padé filters, one per delayed
/// channel. Only `order = 1` is supported.
pub fn pade_augment(plant: &LpvDelayPlant, order: usize) -> Result<PadeAugmentedPlant> {
    if order != 1 {
        return Err(Error::invalid(format!(
            "only first-order Padé augmentation is supported, got order {order}"
        )));
    }
    plant.assert_valid()?;
    let delayed = delayed_channels(plant);
    Ok(PadeAugmentedPlant { source: plant.clone(), order, delayed })
}

impl PadeAugmentedPlant {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Indices of the state channels that received a Padé filter.
    pub fn delayed_channels(&self) -> &[usize] {
        &self.delayed
    }

    /// Augmented state dimension: plant order plus one per delayed channel.
    pub fn dim(&self) -> usize {
        self.source.dims().n + self.delayed.len()
    }

    /// The delayed plant this augmentation was built from (its delay law is
    /// the one the Padé factors track).
    pub fn source(&self) -> &LpvDelayPlant {
        &self.source
    }

    /// Freeze the augmented plant at one scheduling value.
    pub fn eval_at(&self, rho: &[f64]) -> Result<PadeAtRho> {
        let at = self.source.eval_at(rho)?;
        let n = at.a.nrows();
        let nd = self.delayed.len();
        if nd == 0 {
            // Nothing was delayed; the augmentation is the plant itself.
            return Ok(PadeAtRho {
                a: at.a,
                b1: at.b1,
                b2: at.b2,
                c1: at.c1,
                d11: at.d11,
                d12: at.d12,
                c2: at.c2,
                tau: at.tau,
            });
        }
        if !(at.tau > 0.0) {
            return Err(Error::invalid(format!(
                "Padé augmentation needs a positive delay, got τ = {} at ρ = {rho:?}",
                at.tau
            )));
        }
        let (nz, nw) = (at.c1.nrows(), at.b1.ncols());
        let nu = at.b2.ncols();
        let ny = at.c2.nrows();

        // Selection of the delayed channels and the corresponding columns.
        let mut sel = Mat::zeros(nd, n);
        for (row, &j) in self.delayed.iter().enumerate() {
            sel[(row, j)] = 1.0;
        }
        let atau_cols = {
            let mut m = Mat::zeros(n, nd);
            for (col, &j) in self.delayed.iter().enumerate() {
                m.set_column(col, &at.a_tau.column(j));
            }
            m
        };
        let c1tau_cols = {
            let mut m = Mat::zeros(nz, nd);
            for (col, &j) in self.delayed.iter().enumerate() {
                m.set_column(col, &at.c1_tau.column(j));
            }
            m
        };

        // Since only the selected columns of the delayed matrices are
        // nonzero, Aτ = Aτ_cols·sel exactly, and substituting the filter
        // output v = (4/τ)x_p − sel·x gives:
        let mut a = Mat::zeros(n + nd, n + nd);
        a.view_mut((0, 0), (n, n)).copy_from(&(&at.a - &at.a_tau));
        a.view_mut((0, n), (n, nd)).copy_from(&atau_cols.scale(4.0 / at.tau));
        a.view_mut((n, 0), (nd, n)).copy_from(&sel);
        a.view_mut((n, n), (nd, nd))
            .copy_from(&(Mat::identity(nd, nd).scale(-2.0 / at.tau)));

        let stack_b = |top: &Mat, cols: usize| {
            let mut m = Mat::zeros(n + nd, cols);
            m.view_mut((0, 0), (n, cols)).copy_from(top);
            m
        };
        let b1 = stack_b(&at.b1, nw);
        let b2 = stack_b(&at.b2, nu);

        let mut c1 = Mat::zeros(nz, n + nd);
        c1.view_mut((0, 0), (nz, n)).copy_from(&(&at.c1 - &at.c1_tau));
        c1.view_mut((0, n), (nz, nd)).copy_from(&c1tau_cols.scale(4.0 / at.tau));
        let mut c2 = Mat::zeros(ny, n + nd);
        c2.view_mut((0, 0), (ny, n)).copy_from(&at.c2);

        Ok(PadeAtRho { a, b1, b2, c1, d11: at.d11, d12: at.d12, c2, tau: at.tau })
    }
}

/// Discrete matrices produced by the trapezoidal map.
#[derive(Clone, Debug, PartialEq)]
pub struct TustinDiscretization {
    pub a_d: Mat,
    pub b_d: Mat,
    pub c_d: Mat,
    pub d_d: Mat,
}

/// Bilinear (trapezoidal) discretization of a continuous controller at step
/// `h`, ignoring the delayed and sampled structure: the delayed-state and
/// held-state terms are folded into the instantaneous dynamics,
///
/// ```text
/// A_fold = A_K + AτK + A𝒯K,
/// A_d = (I − (h/2)A_fold)⁻¹ (I + (h/2)A_fold),
/// B_d = (I − (h/2)A_fold)⁻¹ h B_K,
/// ```
///
/// with the output matrices carried over unchanged. Fails when
/// `I − (h/2)A_fold` is singular.
pub fn tustin_discretize(ctrl: &ContinuousController, h: f64) -> Result<TustinDiscretization> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("Tustin step must be positive, got {h}")));
    }
    let n = ctrl.a_k.nrows();
    let a_fold = &ctrl.a_k + &ctrl.a_tau_k + &ctrl.a_hold_k;
    let left = Mat::identity(n, n) - a_fold.scale(h / 2.0);
    let right = Mat::identity(n, n) + a_fold.scale(h / 2.0);
    let lu = left.lu();
    let a_d = lu.solve(&right).ok_or_else(|| {
        Error::Singular(format!("I − (h/2)A is singular at h = {h}; the bilinear map is undefined"))
    })?;
    let b_d = lu
        .solve(&ctrl.b_k.scale(h))
        .ok_or_else(|| Error::Singular("I − (h/2)A is singular".into()))?;
    Ok(TustinDiscretization { a_d, b_d, c_d: ctrl.c_k.clone(), d_d: ctrl.d_k.clone() })
}

/// The indirect digital controller for the hybrid loop: at each sampling
/// instant the synthesized continuous controller is recovered at the held
/// scheduling value and pushed through [`tustin_discretize`] at the local
/// sampling period. No delayed taps are produced — the comparison design
/// ignores them by construction.
pub struct BaselineController<'a> {
    cert: &'a SynthesisCertificate,
    plant: &'a LpvDelayPlant,
}

impl<'a> BaselineController<'a> {
    pub fn new(cert: &'a SynthesisCertificate, plant: &'a LpvDelayPlant) -> Self {
        Self { cert, plant }
    }
}

impl SampledController for BaselineController<'_> {
    fn order(&self) -> usize {
        self.plant.dims().n
    }

    fn step(
        &mut self,
        t_k: f64,
        t_k1: f64,
        tau_k: f64,
        rho: &[f64],
        _samples: &[f64],
    ) -> Result<DigitalTaps> {
        let ctrl = realize(self.cert, self.plant, rho)?;
        let d = tustin_discretize(&ctrl, t_k1 - t_k)?;
        Ok(DigitalTaps {
            a_d: d.a_d,
            b_d: d.b_d,
            c_d: d.c_d,
            d_d: d.d_d,
            delayed: vec![],
            interval: (t_k, t_k1),
            tau: tau_k,
            warmup: false,
            clamped: false,
        })
    }
}
