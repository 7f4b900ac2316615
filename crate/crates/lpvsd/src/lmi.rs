//! Decision-variable layout and assembly of the synthesis inequality.
//!
//! The synthesis condition is one symmetric block matrix per scheduling grid
//! point and rate-sign vertex, with block rows sized
//! `[2n, 2n, 2n, 2n, 2n, n_w, n_z]`. Everything in it is affine in the scalar
//! decision variables, which is what lets the whole problem ship to a linear
//! SDP solver. [`VarLayout`] owns the mapping between the flat scalar vector
//! seen by the solver and the structured matrix variables, and
//! [`assemble_synthesis_lmi`] evaluates the block matrix at one point.

use serde::{Deserialize, Serialize};

use crate::lpv::{AffineMatrixFn, PlantAtRho, PlantDims};
use crate::sdp::{LmiBlock, LmiBuilder};
use crate::{Error, Mat, Result};

/// How a matrix decision variable depends on the scheduling parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dependence {
    Constant,
    /// Base matrix plus one slope matrix per scheduling axis.
    Affine,
}

/// Per-variable dependence choices. The default keeps the coupling variables
/// `X`, `Y` constant so the controller factorization stays time-invariant,
/// while the storage function and controller variables schedule affinely.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariableDependence {
    pub lyap: Dependence,
    pub x: Dependence,
    pub y: Dependence,
    pub a_hat: Dependence,
    pub a_hat_tau: Dependence,
    pub a_hat_hold: Dependence,
    pub b_hat: Dependence,
    pub c_hat: Dependence,
    pub d_gain: Dependence,
}

impl Default for VariableDependence {
    fn default() -> Self {
        Self {
            lyap: Dependence::Affine,
            x: Dependence::Constant,
            y: Dependence::Constant,
            a_hat: Dependence::Affine,
            a_hat_tau: Dependence::Affine,
            a_hat_hold: Dependence::Affine,
            b_hat: Dependence::Affine,
            c_hat: Dependence::Affine,
            d_gain: Dependence::Affine,
        }
    }
}

/// Matrix decision variables of the synthesis problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    /// Storage-function matrix, symmetric `2n`.
    Lyap,
    /// Coupling variable `X`, symmetric `n`.
    XMat,
    /// Coupling variable `Y`, symmetric `n`.
    YMat,
    /// Delay-channel integral weight, symmetric `2n`, constant.
    QTau,
    /// Hold-channel integral weight, symmetric `2n`, constant.
    QHold,
    /// Delay-channel double-integral weight, symmetric `2n`, constant.
    RTau,
    /// Hold-channel double-integral weight, symmetric `2n`, constant.
    RHold,
    /// Delay-bound weight, symmetric `2n`, constant.
    TTau,
    /// Transformed controller dynamics, `n x n`.
    AHat,
    /// Transformed delayed controller dynamics, `n x n`.
    AHatTau,
    /// Transformed sampled controller dynamics, `n x n`.
    AHatHold,
    /// Transformed controller input map, `n x n_y`.
    BHat,
    /// Transformed controller output map, `n_u x n`.
    CHat,
    /// Direct feedthrough gain, `n_u x n_y`.
    DGain,
    /// Performance level (scalar).
    Gamma,
}

pub const MATRIX_FIELDS: [Field; 14] = [
    Field::Lyap,
    Field::XMat,
    Field::YMat,
    Field::QTau,
    Field::QHold,
    Field::RTau,
    Field::RHold,
    Field::TTau,
    Field::AHat,
    Field::AHatTau,
    Field::AHatHold,
    Field::BHat,
    Field::CHat,
    Field::DGain,
];

#[derive(Clone, Debug)]
struct FieldInfo {
    field: Field,
    rows: usize,
    cols: usize,
    sym: bool,
    /// 1 for constant, 1 + n_s for affine.
    n_blocks: usize,
    offset: usize,
}

impl FieldInfo {
    fn block_len(&self) -> usize {
        if self.sym {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    fn len(&self) -> usize {
        self.block_len() * self.n_blocks
    }
}

/// Mapping between the flat scalar decision vector and the structured matrix
/// variables. Symmetric matrices are packed as the upper triangle in
/// row-major order; general matrices row-major.
#[derive(Clone, Debug)]
pub struct VarLayout {
    dims: PlantDims,
    n_s: usize,
    dep: VariableDependence,
    fields: Vec<FieldInfo>,
    num_vars: usize,
}

impl VarLayout {
    pub fn new(dims: PlantDims, n_s: usize, dep: VariableDependence) -> Self {
        let n = dims.n;
        let affine = |d: Dependence| match d {
            Dependence::Constant => 1,
            Dependence::Affine => 1 + n_s,
        };
        let spec: [(Field, usize, usize, bool, usize); 14] = [
            (Field::Lyap, 2 * n, 2 * n, true, affine(dep.lyap)),
            (Field::XMat, n, n, true, affine(dep.x)),
            (Field::YMat, n, n, true, affine(dep.y)),
            (Field::QTau, 2 * n, 2 * n, true, 1),
            (Field::QHold, 2 * n, 2 * n, true, 1),
            (Field::RTau, 2 * n, 2 * n, true, 1),
            (Field::RHold, 2 * n, 2 * n, true, 1),
            (Field::TTau, 2 * n, 2 * n, true, 1),
            (Field::AHat, n, n, false, affine(dep.a_hat)),
            (Field::AHatTau, n, n, false, affine(dep.a_hat_tau)),
            (Field::AHatHold, n, n, false, affine(dep.a_hat_hold)),
            (Field::BHat, n, dims.n_y, false, affine(dep.b_hat)),
            (Field::CHat, dims.n_u, n, false, affine(dep.c_hat)),
            (Field::DGain, dims.n_u, dims.n_y, false, affine(dep.d_gain)),
        ];
        let mut fields = Vec::with_capacity(spec.len());
        let mut offset = 0;
        for (field, rows, cols, sym, n_blocks) in spec {
            let info = FieldInfo { field, rows, cols, sym, n_blocks, offset };
            offset += info.len();
            fields.push(info);
        }
        // Gamma sits last.
        let num_vars = offset + 1;
        Self { dims, n_s, dep, fields, num_vars }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn gamma_index(&self) -> usize {
        self.num_vars - 1
    }

    pub fn dims(&self) -> PlantDims {
        self.dims
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn dependence(&self) -> VariableDependence {
        self.dep
    }

    fn info(&self, field: Field) -> &FieldInfo {
        self.fields.iter().find(|f| f.field == field).expect("gamma has no field info")
    }

    fn unpack_block(info: &FieldInfo, data: &[f64]) -> Mat {
        let mut m = Mat::zeros(info.rows, info.cols);
        let mut k = 0;
        if info.sym {
            for r in 0..info.rows {
                for c in r..info.cols {
                    m[(r, c)] = data[k];
                    m[(c, r)] = data[k];
                    k += 1;
                }
            }
        } else {
            for r in 0..info.rows {
                for c in 0..info.cols {
                    m[(r, c)] = data[k];
                    k += 1;
                }
            }
        }
        m
    }

    /// Coefficient block `b` of a field (0 = base, `1 + i` = slope of axis i).
    fn block(&self, x: &[f64], field: Field, b: usize) -> Mat {
        let info = self.info(field);
        let len = info.block_len();
        let start = info.offset + b * len;
        Self::unpack_block(info, &x[start..start + len])
    }

    /// Evaluate one matrix field at the scheduling point.
    pub fn eval_field(&self, x: &[f64], field: Field, rho: &[f64]) -> Mat {
        let info = self.info(field);
        let mut m = self.block(x, field, 0);
        for i in 1..info.n_blocks {
            m += self.block(x, field, i) * rho[i - 1];
        }
        m
    }

    /// Reconstruct a field as an explicit affine function of the parameter.
    pub fn extract_affine(&self, x: &[f64], field: Field) -> AffineMatrixFn {
        let info = self.info(field);
        let base = self.block(x, field, 0);
        let coeffs = (0..self.n_s)
            .map(|i| {
                if info.n_blocks > 1 {
                    self.block(x, field, 1 + i)
                } else {
                    Mat::zeros(info.rows, info.cols)
                }
            })
            .collect();
        AffineMatrixFn::new(base, coeffs).expect("layout blocks share dimensions")
    }

    /// Evaluate every variable at `(x, rho)`.
    pub fn eval(&self, x: &[f64], rho: &[f64]) -> LmiVars {
        debug_assert_eq!(x.len(), self.num_vars);
        debug_assert_eq!(rho.len(), self.n_s);
        let lyap_info = self.info(Field::Lyap);
        let lyap_slopes = (0..self.n_s)
            .map(|i| {
                if lyap_info.n_blocks > 1 {
                    self.block(x, Field::Lyap, 1 + i)
                } else {
                    Mat::zeros(lyap_info.rows, lyap_info.cols)
                }
            })
            .collect();
        LmiVars {
            lyap: self.eval_field(x, Field::Lyap, rho),
            lyap_slopes,
            x_mat: self.eval_field(x, Field::XMat, rho),
            y_mat: self.eval_field(x, Field::YMat, rho),
            q_tau: self.eval_field(x, Field::QTau, rho),
            q_hold: self.eval_field(x, Field::QHold, rho),
            r_tau: self.eval_field(x, Field::RTau, rho),
            r_hold: self.eval_field(x, Field::RHold, rho),
            t_tau: self.eval_field(x, Field::TTau, rho),
            a_hat: self.eval_field(x, Field::AHat, rho),
            a_hat_tau: self.eval_field(x, Field::AHatTau, rho),
            a_hat_hold: self.eval_field(x, Field::AHatHold, rho),
            b_hat: self.eval_field(x, Field::BHat, rho),
            c_hat: self.eval_field(x, Field::CHat, rho),
            d_gain: self.eval_field(x, Field::DGain, rho),
            gamma: x[self.gamma_index()],
        }
    }

    /// Diagnostic names, one per scalar variable.
    pub fn names(&self) -> Vec<String> {
        let mut out = vec![String::new(); self.num_vars];
        for info in &self.fields {
            let tag = match info.field {
                Field::Lyap => "P",
                Field::XMat => "X",
                Field::YMat => "Y",
                Field::QTau => "Qtau",
                Field::QHold => "Qhold",
                Field::RTau => "Rtau",
                Field::RHold => "Rhold",
                Field::TTau => "Ttau",
                Field::AHat => "Ahat",
                Field::AHatTau => "Ahat_tau",
                Field::AHatHold => "Ahat_hold",
                Field::BHat => "Bhat",
                Field::CHat => "Chat",
                Field::DGain => "DK",
                Field::Gamma => unreachable!(),
            };
            let mut k = info.offset;
            for b in 0..info.n_blocks {
                let suffix =
                    if b == 0 { String::new() } else { format!(".d{}", b - 1) };
                if info.sym {
                    for r in 0..info.rows {
                        for c in r..info.cols {
                            out[k] = format!("{tag}{suffix}[{r},{c}]");
                            k += 1;
                        }
                    }
                } else {
                    for r in 0..info.rows {
                        for c in 0..info.cols {
                            out[k] = format!("{tag}{suffix}[{r},{c}]");
                            k += 1;
                        }
                    }
                }
            }
        }
        out[self.num_vars - 1] = "gamma".to_string();
        out
    }

    /// Constraint block `margin*I - F(rho) <= 0` for a symmetric matrix field
    /// (positive-definiteness with slack), written directly from the layout.
    pub fn positivity_block(&self, field: Field, rho: &[f64], margin: f64) -> Result<LmiBlock> {
        let info = self.info(field);
        if !info.sym {
            return Err(Error::invalid("positivity constraints need a symmetric field"));
        }
        let mut b = LmiBuilder::new(info.rows);
        for d in 0..info.rows {
            b.push(0, d, d, margin)?;
        }
        let len = info.block_len();
        for blk in 0..info.n_blocks {
            let w = if blk == 0 { 1.0 } else { rho[blk - 1] };
            let mut k = info.offset + blk * len;
            for r in 0..info.rows {
                for c in r..info.cols {
                    b.push(k + 1, r, c, -w)?;
                    k += 1;
                }
            }
        }
        Ok(b.finish())
    }

    /// Constraint block `margin*I - [[Y, I], [I, X]] <= 0` (coupling-matrix
    /// positivity with slack), which also certifies `I - XY` invertible.
    pub fn coupling_positivity_block(&self, rho: &[f64], margin: f64) -> Result<LmiBlock> {
        let n = self.dims.n;
        let mut b = LmiBuilder::new(2 * n);
        for d in 0..2 * n {
            b.push(0, d, d, margin)?;
        }
        for r in 0..n {
            b.push(0, r, n + r, -1.0)?;
        }
        for (field, row0) in [(Field::YMat, 0usize), (Field::XMat, n)] {
            let info = self.info(field);
            let len = info.block_len();
            for blk in 0..info.n_blocks {
                let w = if blk == 0 { 1.0 } else { rho[blk - 1] };
                let mut k = info.offset + blk * len;
                for r in 0..info.rows {
                    for c in r..info.cols {
                        b.push(k + 1, row0 + r, row0 + c, -w)?;
                        k += 1;
                    }
                }
            }
        }
        Ok(b.finish())
    }
}

/// All matrix variables evaluated at one `(x, rho)` point.
#[derive(Clone, Debug)]
pub struct LmiVars {
    pub lyap: Mat,
    /// Exact parameter derivatives of the storage function, one per axis.
    pub lyap_slopes: Vec<Mat>,
    pub x_mat: Mat,
    pub y_mat: Mat,
    pub q_tau: Mat,
    pub q_hold: Mat,
    pub r_tau: Mat,
    pub r_hold: Mat,
    pub t_tau: Mat,
    pub a_hat: Mat,
    pub a_hat_tau: Mat,
    pub a_hat_hold: Mat,
    pub b_hat: Mat,
    pub c_hat: Mat,
    pub d_gain: Mat,
    pub gamma: f64,
}

fn block2(tl: &Mat, tr: &Mat, bl: &Mat, br: &Mat) -> Mat {
    let (rt, ct) = (tl.nrows(), tl.ncols());
    let (rb, cb) = (bl.nrows(), br.ncols());
    debug_assert_eq!(tr.nrows(), rt);
    debug_assert_eq!(br.ncols(), cb);
    let mut m = Mat::zeros(rt + rb, ct + cb);
    m.view_mut((0, 0), (rt, ct)).copy_from(tl);
    m.view_mut((0, ct), (rt, tr.ncols())).copy_from(tr);
    m.view_mut((rt, 0), (rb, bl.ncols())).copy_from(bl);
    m.view_mut((rt, ct), (rb, cb)).copy_from(br);
    m
}

fn set_block(m: &mut Mat, r0: usize, c0: usize, b: &Mat) {
    m.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
}

/// Evaluate the synthesis inequality's left-hand side at one scheduling
/// point, with the rate-term signs resolved by `signs` (one per axis,
/// applied uniformly across the three sign-carrying diagonal blocks).
///
/// Feasibility means this matrix is negative definite. The result is
/// bit-exactly symmetric by construction.
#[allow(clippy::too_many_arguments)]
pub fn assemble_synthesis_lmi(
    plant: &PlantAtRho,
    vars: &LmiVars,
    lambda: &[f64; 4],
    tau_bound: f64,
    period_bound: f64,
    rate_bounds: &[f64],
    signs: &[f64],
) -> Result<Mat> {
    let n = plant.a.nrows();
    let n_w = plant.b1.ncols();
    let n_z = plant.c1.nrows();
    let n_y = plant.c2.nrows();
    let n_u = plant.b2.ncols();
    let n_s = rate_bounds.len();
    let two_n = 2 * n;

    if signs.len() != n_s || plant.tau_grad.len() != n_s || vars.lyap_slopes.len() != n_s {
        return Err(Error::dim(format!(
            "sign/rate/gradient lengths disagree: {} signs, {} rates, {} delay gradients, \
             {} storage slopes",
            signs.len(),
            n_s,
            plant.tau_grad.len(),
            vars.lyap_slopes.len()
        )));
    }
    let shape_checks: [(&str, &Mat, usize, usize); 14] = [
        ("storage", &vars.lyap, two_n, two_n),
        ("X", &vars.x_mat, n, n),
        ("Y", &vars.y_mat, n, n),
        ("Qtau", &vars.q_tau, two_n, two_n),
        ("Qhold", &vars.q_hold, two_n, two_n),
        ("Rtau", &vars.r_tau, two_n, two_n),
        ("Rhold", &vars.r_hold, two_n, two_n),
        ("Ttau", &vars.t_tau, two_n, two_n),
        ("Ahat", &vars.a_hat, n, n),
        ("Ahat_tau", &vars.a_hat_tau, n, n),
        ("Ahat_hold", &vars.a_hat_hold, n, n),
        ("Bhat", &vars.b_hat, n, n_y),
        ("Chat", &vars.c_hat, n_u, n),
        ("DK", &vars.d_gain, n_u, n_y),
    ];
    for (name, m, rows, cols) in shape_checks {
        if m.nrows() != rows || m.ncols() != cols {
            return Err(Error::dim(format!(
                "{name} is {}x{}, expected {rows}x{cols}",
                m.nrows(),
                m.ncols()
            )));
        }
    }

    let eye_n = Mat::identity(n, n);
    let v_tilde = block2(&vars.y_mat, &eye_n, &eye_n, &vars.x_mat);

    let ay = &plant.a * &vars.y_mat;
    let xa = &vars.x_mat * &plant.a;
    let cal_a = block2(&ay, &plant.a, &vars.a_hat, &xa);

    let atau_y = &plant.a_tau * &vars.y_mat;
    let x_atau = &vars.x_mat * &plant.a_tau;
    let cal_a_tau = block2(&atau_y, &plant.a_tau, &vars.a_hat_tau, &x_atau);

    let b2_chat = &plant.b2 * &vars.c_hat;
    let b2_dk_c2 = &plant.b2 * &vars.d_gain * &plant.c2;
    let bhat_c2 = &vars.b_hat * &plant.c2;
    let cal_a_hold = block2(&b2_chat, &b2_dk_c2, &vars.a_hat_hold, &bhat_c2);

    let x_b1 = &vars.x_mat * &plant.b1;
    let mut cal_b = Mat::zeros(two_n, n_w);
    set_block(&mut cal_b, 0, 0, &plant.b1);
    set_block(&mut cal_b, n, 0, &x_b1);

    let c1_y = &plant.c1 * &vars.y_mat;
    let mut cal_c = Mat::zeros(n_z, two_n);
    set_block(&mut cal_c, 0, 0, &c1_y);
    set_block(&mut cal_c, 0, n, &plant.c1);

    let c1tau_y = &plant.c1_tau * &vars.y_mat;
    let mut cal_c_tau = Mat::zeros(n_z, two_n);
    set_block(&mut cal_c_tau, 0, 0, &c1tau_y);
    set_block(&mut cal_c_tau, 0, n, &plant.c1_tau);

    let d12_chat = &plant.d12 * &vars.c_hat;
    let d12_dk_c2 = &plant.d12 * &vars.d_gain * &plant.c2;
    let mut cal_c_hold = Mat::zeros(n_z, two_n);
    set_block(&mut cal_c_hold, 0, 0, &d12_chat);
    set_block(&mut cal_c_hold, 0, n, &d12_dk_c2);

    let [l2, l3, l4, l5] = *lambda;

    // Diagonal blocks. The signed sums resolve the worst-case parameter-rate
    // directions; each axis gets one sign shared by all three occurrences.
    // Symmetric pairs are summed before mixing with other terms so the
    // result stays symmetric to the last bit.
    let sym_a = &cal_a + cal_a.transpose();
    let mut xi11 = &vars.q_tau - &vars.r_tau
        + &vars.t_tau * (tau_bound * tau_bound)
        + &vars.q_hold
        - &vars.r_hold
        + sym_a;
    for i in 0..n_s {
        xi11 += &vars.lyap_slopes[i] * (signs[i] * rate_bounds[i]);
    }

    let tau_rate: f64 = (0..n_s).map(|i| signs[i] * rate_bounds[i] * plant.tau_grad[i]).sum();
    let xi33 = &vars.q_tau * -(1.0 - tau_rate) - &vars.r_tau
        + (&cal_a_tau + cal_a_tau.transpose()) * l3;

    let period_rate: f64 =
        (0..n_s).map(|i| signs[i] * rate_bounds[i] * plant.period_grad[i]).sum();
    let xi44 = &vars.q_hold * -(1.0 - period_rate) - &vars.r_hold
        + (&cal_a_hold + cal_a_hold.transpose()) * l4;

    let xi22 = &vars.r_tau * (tau_bound * tau_bound)
        + &vars.r_hold * (period_bound * period_bound)
        - &v_tilde * (2.0 * l2);

    let sizes = [two_n, two_n, two_n, two_n, two_n, n_w, n_z];
    let mut offs = [0usize; 7];
    for i in 1..7 {
        offs[i] = offs[i - 1] + sizes[i - 1];
    }
    let total = offs[6] + sizes[6];
    let mut m = Mat::zeros(total, total);

    let mut put = |bi: usize, bj: usize, blk: &Mat| {
        debug_assert!(bi <= bj);
        debug_assert_eq!((blk.nrows(), blk.ncols()), (sizes[bi], sizes[bj]));
        set_block(&mut m, offs[bi], offs[bj], blk);
        if bi != bj {
            set_block(&mut m, offs[bj], offs[bi], &blk.transpose());
        }
    };

    let cal_a_t = cal_a.transpose();
    put(0, 0, &xi11);
    put(0, 1, &(&vars.lyap - &v_tilde + &cal_a_t * l2));
    put(0, 2, &(&vars.r_tau + &cal_a_tau + &cal_a_t * l3));
    put(0, 3, &(&vars.r_hold + &cal_a_hold + &cal_a_t * l4));
    put(0, 4, &(&cal_a_t * l5));
    put(0, 5, &cal_b);
    put(0, 6, &cal_c.transpose());

    put(1, 1, &xi22);
    put(1, 2, &(&cal_a_tau * l2 - &v_tilde * l3));
    put(1, 3, &(&cal_a_hold * l2 - &v_tilde * l4));
    put(1, 4, &(-&v_tilde * l5));
    put(1, 5, &(&cal_b * l2));
    put(1, 6, &Mat::zeros(two_n, n_z));

    put(2, 2, &xi33);
    put(2, 3, &(&cal_a_hold * l3 + cal_a_tau.transpose() * l4));
    put(2, 4, &(cal_a_tau.transpose() * l5));
    put(2, 5, &(&cal_b * l3));
    put(2, 6, &cal_c_tau.transpose());

    put(3, 3, &xi44);
    put(3, 4, &(cal_a_hold.transpose() * l5));
    put(3, 5, &(&cal_b * l4));
    put(3, 6, &cal_c_hold.transpose());

    put(4, 4, &(-&vars.t_tau));
    put(4, 5, &(&cal_b * l5));
    put(4, 6, &Mat::zeros(two_n, n_z));

    put(5, 5, &(Mat::identity(n_w, n_w) * -vars.gamma));
    put(5, 6, &plant.d11.transpose());

    put(6, 6, &(Mat::identity(n_z, n_z) * -vars.gamma));

    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{build_afr_plant, EngineConfig};
    use crate::lpv::{AffineMatrixFn, DelayLaw, LpvDelayPlant, SamplingLaw, ScheduleSet};
    use crate::{ColVec, Mat};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn afr_dims() -> PlantDims {
        build_afr_plant(&EngineConfig::default()).unwrap().dims()
    }

    #[test]
    fn default_layout_scalar_count() {
        let layout = VarLayout::new(afr_dims(), 1, VariableDependence::default());
        // 2*36 (storage affine) + 2*10 (X, Y constant) + 5*36 (weights)
        // + 3*2*16 (hat dynamics affine) + 2*4 + 2*4 + 2*1 + 1 (gamma).
        assert_eq!(layout.num_vars(), 387);
        assert_eq!(layout.gamma_index(), 386);
        let names = layout.names();
        assert_eq!(names.len(), 387);
        assert_eq!(names[386], "gamma");
        assert_eq!(names[0], "P[0,0]");
        assert!(names.iter().all(|n| !n.is_empty()));
    }

    #[test]
    fn layout_eval_extract_round_trip() {
        let layout = VarLayout::new(afr_dims(), 1, VariableDependence::default());
        let x: Vec<f64> = (0..layout.num_vars()).map(|i| (i as f64 * 0.37).sin()).collect();
        let rho = [1700.0];
        let vars = layout.eval(&x, &rho);
        for field in MATRIX_FIELDS {
            let affine = layout.extract_affine(&x, field);
            let direct = layout.eval_field(&x, field, &rho);
            assert_relative_eq!(affine.eval(&rho).unwrap(), direct, max_relative = 1e-12);
        }
        // Symmetric fields unpack symmetric.
        assert_eq!(vars.lyap, vars.lyap.transpose());
        assert_eq!(vars.q_tau, vars.q_tau.transpose());
        // Storage slope is the affine coefficient exactly.
        let lyap_fn = layout.extract_affine(&x, Field::Lyap);
        assert_eq!(&vars.lyap_slopes[0], lyap_fn.coeff(0));
    }

    /// Scalar plant with distinct values in every slot; every block of the
    /// assembled matrix is checked against hand-computed numbers.
    fn hand_plant() -> PlantAtRho {
        PlantAtRho {
            a: Mat::from_row_slice(1, 1, &[2.0]),
            a_tau: Mat::from_row_slice(1, 1, &[0.5]),
            b1: Mat::from_row_slice(1, 1, &[1.0]),
            b2: Mat::from_row_slice(1, 1, &[1.5]),
            c1: Mat::from_row_slice(1, 1, &[1.0]),
            c1_tau: Mat::from_row_slice(1, 1, &[0.25]),
            d11: Mat::from_row_slice(1, 1, &[0.125]),
            d12: Mat::from_row_slice(1, 1, &[0.75]),
            c2: Mat::from_row_slice(1, 1, &[1.0]),
            tau: 0.1,
            tau_grad: vec![0.01],
            period: 0.2,
            period_grad: vec![0.02],
            out_of_set: false,
        }
    }

    fn hand_vars() -> LmiVars {
        LmiVars {
            lyap: Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]),
            lyap_slopes: vec![Mat::from_row_slice(2, 2, &[0.01, 0.0, 0.0, 0.02])],
            x_mat: Mat::from_row_slice(1, 1, &[5.0]),
            y_mat: Mat::from_row_slice(1, 1, &[3.0]),
            q_tau: Mat::from_row_slice(2, 2, &[0.5, 0.05, 0.05, 0.6]),
            q_hold: Mat::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.8]),
            r_tau: Mat::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 1.0]),
            r_hold: Mat::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 1.2]),
            t_tau: Mat::from_row_slice(2, 2, &[1.3, 0.0, 0.0, 1.4]),
            a_hat: Mat::from_row_slice(1, 1, &[7.0]),
            a_hat_tau: Mat::from_row_slice(1, 1, &[8.0]),
            a_hat_hold: Mat::from_row_slice(1, 1, &[9.0]),
            b_hat: Mat::from_row_slice(1, 1, &[10.0]),
            c_hat: Mat::from_row_slice(1, 1, &[11.0]),
            d_gain: Mat::from_row_slice(1, 1, &[12.0]),
            gamma: 13.0,
        }
    }

    fn view(m: &Mat, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        m.view((r0, c0), (rows, cols)).into_owned()
    }

    #[test]
    fn assembled_blocks_match_hand_computation() {
        let plant = hand_plant();
        let vars = hand_vars();
        let m = assemble_synthesis_lmi(
            &plant,
            &vars,
            &[2.0, 3.0, 4.0, 5.0],
            0.3,
            0.4,
            &[10.0],
            &[-1.0],
        )
        .unwrap();
        assert_eq!(m.nrows(), 12);

        let cases: Vec<(usize, usize, Vec<f64>)> = vec![
            // Diagonal blocks.
            (0, 0, vec![11.217, 9.05, 9.05, 19.126]),
            (2, 2, vec![-11.743, -4.0, -4.0, -19.718]),
            (4, 4, vec![7.55, 25.445, 25.445, 13.34]),
            (6, 6, vec![130.06, 108.0, 108.0, 77.84]),
            (8, 8, vec![-1.3, 0.0, 0.0, -1.4]),
            // Row 1 off-diagonals.
            (0, 2, vec![10.0, 13.1, 3.1, 17.0]),
            (0, 4, vec![20.4, 21.5, 14.0, 33.5]),
            (0, 6, vec![41.6, 46.0, 17.0, 51.2]),
            (0, 8, vec![30.0, 35.0, 10.0, 50.0]),
            // Row 2.
            (2, 4, vec![-6.0, -2.0, 13.0, -10.0]),
            (2, 6, vec![21.0, 32.0, 14.0, 0.0]),
            (2, 8, vec![-15.0, -5.0, -5.0, -25.0]),
            // Rows 3-5.
            (4, 6, vec![55.5, 86.0, 29.0, 40.0]),
            (4, 8, vec![7.5, 40.0, 2.5, 12.5]),
            (6, 8, vec![82.5, 45.0, 90.0, 50.0]),
        ];
        for (r0, c0, want) in cases {
            let got = view(&m, r0, c0, 2, 2);
            let want = Mat::from_row_slice(2, 2, &want);
            assert_relative_eq!(got, want, epsilon = 1e-12, max_relative = 1e-12);
            // Mirror.
            let got_t = view(&m, c0, r0, 2, 2);
            assert_relative_eq!(got_t, want.transpose(), epsilon = 1e-12);
        }

        // Exogenous/performance columns.
        let col_cases: Vec<(usize, usize, usize, usize, Vec<f64>)> = vec![
            (0, 10, 2, 1, vec![1.0, 5.0]),
            (2, 10, 2, 1, vec![2.0, 10.0]),
            (4, 10, 2, 1, vec![3.0, 15.0]),
            (6, 10, 2, 1, vec![4.0, 20.0]),
            (8, 10, 2, 1, vec![5.0, 25.0]),
            (0, 11, 2, 1, vec![3.0, 1.0]),
            (2, 11, 2, 1, vec![0.0, 0.0]),
            (4, 11, 2, 1, vec![0.75, 0.25]),
            (6, 11, 2, 1, vec![8.25, 9.0]),
            (8, 11, 2, 1, vec![0.0, 0.0]),
            (10, 10, 1, 1, vec![-13.0]),
            (11, 11, 1, 1, vec![-13.0]),
            (10, 11, 1, 1, vec![0.125]),
        ];
        for (r0, c0, rows, cols, want) in col_cases {
            let got = view(&m, r0, c0, rows, cols);
            let want = Mat::from_row_slice(rows, cols, &want);
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn assembled_matrix_is_bit_symmetric() {
        let plant = build_afr_plant(&EngineConfig::default()).unwrap();
        let at = plant.eval_at(&[2000.0]).unwrap();
        let layout = VarLayout::new(plant.dims(), 1, VariableDependence::default());
        let x: Vec<f64> = (0..layout.num_vars()).map(|i| ((i * 7 + 3) % 19) as f64 - 9.0).collect();
        let vars = layout.eval(&x, &[2000.0]);
        let m = assemble_synthesis_lmi(&at, &vars, &[0.1, 1.0, 10.0, 0.5], 0.225, 0.0157, &[50.0], &[1.0])
            .unwrap();
        assert_eq!(m.nrows(), 45);
        for r in 0..45 {
            for c in 0..45 {
                assert_eq!(m[(r, c)].to_bits(), m[(c, r)].to_bits(), "at ({r}, {c})");
            }
        }
    }

    #[test]
    fn assembly_is_affine_in_decision_variables() {
        let plant = build_afr_plant(&EngineConfig::default()).unwrap();
        let at = plant.eval_at(&[3100.0]).unwrap();
        let layout = VarLayout::new(plant.dims(), 1, VariableDependence::default());
        let rho = [3100.0];
        let x1: Vec<f64> = (0..layout.num_vars()).map(|i| (i as f64 * 0.11).cos()).collect();
        let x2: Vec<f64> = x1.iter().map(|v| 2.0 * v).collect();
        let x0 = vec![0.0; layout.num_vars()];
        let lam = [1.0, 0.1, 10.0, 0.0];
        let args = (0.225, 0.015708, [50.0], [-1.0]);
        let m = |x: &[f64]| {
            assemble_synthesis_lmi(
                &at,
                &layout.eval(x, &rho),
                &lam,
                args.0,
                args.1,
                &args.2,
                &args.3,
            )
            .unwrap()
        };
        let resid = m(&x2) - m(&x1) * 2.0 + m(&x0);
        let max = resid.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max <= 1e-9, "affineness residual {max}");
    }

    #[test]
    fn zero_plant_block11_reduces_to_delay_weight() {
        // Zero plant/hats, lambda = 0, unit weights, nu = 0: block (1,1)
        // collapses to tau_bound^2 * I.
        let zero = PlantAtRho {
            a: Mat::zeros(1, 1),
            a_tau: Mat::zeros(1, 1),
            b1: Mat::zeros(1, 1),
            b2: Mat::zeros(1, 1),
            c1: Mat::zeros(1, 1),
            c1_tau: Mat::zeros(1, 1),
            d11: Mat::zeros(1, 1),
            d12: Mat::zeros(1, 1),
            c2: Mat::zeros(1, 1),
            tau: 0.0,
            tau_grad: vec![0.0],
            period: 0.0,
            period_grad: vec![0.0],
            out_of_set: false,
        };
        let eye = Mat::identity(2, 2);
        let vars = LmiVars {
            lyap: eye.clone(),
            lyap_slopes: vec![Mat::zeros(2, 2)],
            x_mat: Mat::zeros(1, 1),
            y_mat: Mat::zeros(1, 1),
            q_tau: eye.clone(),
            q_hold: eye.clone(),
            r_tau: eye.clone(),
            r_hold: eye.clone(),
            t_tau: eye.clone(),
            a_hat: Mat::zeros(1, 1),
            a_hat_tau: Mat::zeros(1, 1),
            a_hat_hold: Mat::zeros(1, 1),
            b_hat: Mat::zeros(1, 1),
            c_hat: Mat::zeros(1, 1),
            d_gain: Mat::zeros(1, 1),
            gamma: 2.5,
        };
        let tau_bound = 0.3;
        let m = assemble_synthesis_lmi(
            &zero,
            &vars,
            &[0.0; 4],
            tau_bound,
            0.4,
            &[0.0],
            &[1.0],
        )
        .unwrap();
        let got = view(&m, 0, 0, 2, 2);
        assert_relative_eq!(got, Mat::identity(2, 2) * (tau_bound * tau_bound), epsilon = 1e-15);
        // Performance corner carries -gamma I regardless.
        assert_relative_eq!(m[(11, 11)], -2.5, epsilon = 1e-15);
    }

    #[test]
    fn assembly_rejects_bad_dimensions() {
        let plant = hand_plant();
        let mut vars = hand_vars();
        vars.c_hat = Mat::zeros(2, 2);
        let r = assemble_synthesis_lmi(&plant, &vars, &[0.0; 4], 0.3, 0.4, &[1.0], &[1.0]);
        assert!(matches!(r, Err(Error::Dimension(_))));
        let vars = hand_vars();
        let r = assemble_synthesis_lmi(&plant, &vars, &[0.0; 4], 0.3, 0.4, &[1.0, 2.0], &[1.0, 1.0]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn positivity_block_pins_field_entries() {
        let layout = VarLayout::new(afr_dims(), 1, VariableDependence::default());
        let rho = [1200.0];
        let margin = 1e-7;
        let blk = layout.positivity_block(Field::Lyap, &rho, margin).unwrap();
        assert_eq!(blk.dim(), 8);
        let x: Vec<f64> = (0..layout.num_vars()).map(|i| ((i % 11) as f64) * 0.3 - 1.0).collect();
        let lyap = layout.eval_field(&x, Field::Lyap, &rho);
        let direct = Mat::identity(8, 8) * margin - &lyap;
        assert_relative_eq!(blk.eval(&x), direct, max_relative = 1e-12, epsilon = 1e-12);

        let vb = layout.coupling_positivity_block(&rho, margin).unwrap();
        let xm = layout.eval_field(&x, Field::XMat, &rho);
        let ym = layout.eval_field(&x, Field::YMat, &rho);
        let eye = Mat::identity(4, 4);
        let v = block2(&ym, &eye, &eye, &xm);
        let direct = Mat::identity(8, 8) * margin - v;
        assert_relative_eq!(vb.eval(&x), direct, max_relative = 1e-12, epsilon = 1e-12);
    }

    #[test]
    fn all_constant_layout_shrinks() {
        let dep = VariableDependence {
            lyap: Dependence::Constant,
            a_hat: Dependence::Constant,
            a_hat_tau: Dependence::Constant,
            a_hat_hold: Dependence::Constant,
            b_hat: Dependence::Constant,
            c_hat: Dependence::Constant,
            d_gain: Dependence::Constant,
            ..VariableDependence::default()
        };
        let layout = VarLayout::new(afr_dims(), 1, dep);
        // 36 + 10 + 10 + 5*36 + 16*3 + 4 + 4 + 1 + 1 = 294
        assert_eq!(layout.num_vars(), 294);
    }

    // Quiet the unused-import warnings for items used by other test modules.
    #[allow(unused)]
    fn _keep(_: &LpvDelayPlant, _: &DelayLaw, _: &SamplingLaw, _: &ScheduleSet, _: &AffineMatrixFn, _: &ColVec, _: &Arc<()>) {}
}
