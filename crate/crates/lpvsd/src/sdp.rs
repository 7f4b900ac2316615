//! Semidefinite programming layer.
//!
//! A problem is a linear cost over scalar variables `x` subject to linear
//! matrix inequalities `F0 + sum_j x_j F_j <= 0` (negative semidefinite).
//! Solving is delegated to an interior-point cone solver; feasibility of a
//! candidate point is always re-checkable through [`residual`], which uses an
//! independent symmetric eigensolver rather than the solver's own report.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

/// One `F0 + sum_j x_j F_j <= 0` block. Terms hold only the upper triangle
/// (`row <= col`) of each symmetric coefficient matrix, in canonical order:
/// ascending term index `j` (0 is the constant `F0`, `j >= 1` multiplies
/// `x_{j-1}`), then ascending `(row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiBlock {
    dim: usize,
    terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(usize, Vec<(usize, usize, f64)>)] {
        &self.terms
    }

    /// Dense symmetric value of `F0 + sum_j x_j F_j`.
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = Mat::zeros(self.dim, self.dim);
        for (j, entries) in &self.terms {
            let scale = if *j == 0 { 1.0 } else { x[*j - 1] };
            if scale == 0.0 {
                continue;
            }
            for &(r, c, v) in entries {
                out[(r, c)] += scale * v;
                if r != c {
                    out[(c, r)] += scale * v;
                }
            }
        }
        out
    }
}

/// Incremental builder for an [`LmiBlock`]; accepts entries in any order and
/// canonicalizes (sort, merge duplicates, drop zeros) on `finish`.
pub struct LmiBuilder {
    dim: usize,
    entries: Vec<(usize, usize, usize, f64)>,
}

impl LmiBuilder {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Add one upper-triangle entry of term `j`.
    pub fn push(&mut self, j: usize, row: usize, col: usize, value: f64) -> Result<()> {
        if row > col || col >= self.dim {
            return Err(Error::invalid(format!(
                "entry ({row}, {col}) must satisfy row <= col < {}",
                self.dim
            )));
        }
        if value != 0.0 {
            self.entries.push((j, row, col, value));
        }
        Ok(())
    }

    /// Add a whole symmetric matrix as term `j`. Tiny asymmetries from
    /// floating-point assembly are averaged away; gross ones are a bug.
    pub fn add_matrix(&mut self, j: usize, m: &Mat) -> Result<()> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::dim(format!(
                "term {j} is {}x{}, block dimension is {}",
                m.nrows(),
                m.ncols(),
                self.dim
            )));
        }
        for r in 0..self.dim {
            for c in r..self.dim {
                let v = 0.5 * (m[(r, c)] + m[(c, r)]);
                debug_assert!(
                    (m[(r, c)] - m[(c, r)]).abs() <= 1e-9 * (1.0 + v.abs()),
                    "asymmetric LMI term {j} at ({r}, {c}): {} vs {}",
                    m[(r, c)],
                    m[(c, r)]
                );
                self.push(j, r, c, v)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> LmiBlock {
        self.entries.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        let mut terms: Vec<(usize, Vec<(usize, usize, f64)>)> = Vec::new();
        for (j, r, c, v) in self.entries {
            if terms.last().map(|t| t.0) != Some(j) {
                terms.push((j, Vec::new()));
            }
            let list = &mut terms.last_mut().unwrap().1;
            match list.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => list.push((r, c, v)),
            }
        }
        for (_, list) in &mut terms {
            list.retain(|e| e.2 != 0.0);
        }
        terms.retain(|(_, list)| !list.is_empty());
        LmiBlock { dim: self.dim, terms }
    }
}

/// Linear SDP in LMI form: minimize `cost . x` subject to every block being
/// negative semidefinite.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SdpProblem {
    num_vars: usize,
    cost: Vec<f64>,
    blocks: Vec<LmiBlock>,
    var_names: Vec<String>,
}

impl SdpProblem {
    pub fn new(num_vars: usize, cost: Vec<f64>) -> Result<Self> {
        if cost.len() != num_vars {
            return Err(Error::dim(format!(
                "cost vector has {} entries for {num_vars} variables",
                cost.len()
            )));
        }
        Ok(Self { num_vars, cost, blocks: Vec::new(), var_names: Vec::new() })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn add_block(&mut self, block: LmiBlock) -> Result<()> {
        for (j, _) in &block.terms {
            if *j > self.num_vars {
                return Err(Error::invalid(format!(
                    "block references term {j} but the problem has {} variables",
                    self.num_vars
                )));
            }
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Diagnostic name for variable `i` (empty when unnamed).
    pub fn var_name(&self, i: usize) -> &str {
        self.var_names.get(i).map(String::as_str).unwrap_or("")
    }

    pub fn set_var_name(&mut self, i: usize, name: impl Into<String>) {
        if self.var_names.is_empty() {
            self.var_names = vec![String::new(); self.num_vars];
        }
        self.var_names[i] = name.into();
        if self.var_names.iter().all(String::is_empty) {
            self.var_names.clear();
        }
    }
}

/// Termination status mapped from the interior-point solver.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Converged to the requested tolerances.
    Optimal,
    /// Converged to reduced accuracy; residuals must be checked before use.
    AlmostOptimal,
    /// A certificate of primal or dual infeasibility was found.
    Infeasible,
    /// Iteration limit, numerical trouble, or any other non-answer.
    Failed(String),
}

impl SolveStatus {
    /// Whether `x` is worth examining at all.
    pub fn has_candidate(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::AlmostOptimal)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time_s: f64,
}

/// Interior-point stopping tolerances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTolerances {
    /// Primal/dual feasibility tolerance.
    pub feas: f64,
    /// Duality gap tolerance (absolute and relative).
    pub gap: f64,
    pub max_iter: u32,
}

impl Default for SolveTolerances {
    fn default() -> Self {
        Self { feas: 1e-7, gap: 1e-6, max_iter: 200 }
    }
}

fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Scaled-triangle index of upper-triangle entry `(r, c)`, column-major.
fn svec_index(r: usize, c: usize) -> usize {
    c * (c + 1) / 2 + r
}

/// Solve the SDP. Deterministic: identical problems produce bit-identical
/// solutions.
pub fn solve(p: &SdpProblem, tol: &SolveTolerances) -> Result<SdpSolution> {
    if p.blocks.is_empty() {
        return Err(Error::invalid("SDP has no constraint blocks"));
    }
    let m = p.num_vars;
    let rt2 = std::f64::consts::SQRT_2;

    let total_rows: usize = p.blocks.iter().map(|b| tri_len(b.dim)).sum();
    let mut b_vec = vec![0.0f64; total_rows];
    // cols[j] collects (global_row, value) for variable j.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];

    let mut offset = 0usize;
    for block in &p.blocks {
        let t = tri_len(block.dim);
        for (j, entries) in &block.terms {
            if *j == 0 {
                for &(r, c, v) in entries {
                    let scaled = if r == c { v } else { rt2 * v };
                    // s = b - A x must equal svec(-F(x)).
                    b_vec[offset + svec_index(r, c)] = -scaled;
                }
            } else {
                // Pad the variable's column with explicit zeros across the
                // whole block. This leaves the matrix values untouched but
                // raises the column's degree in the fill-reducing ordering,
                // so conic rows are eliminated before variable columns;
                // sparse variable columns shared across blocks otherwise
                // weld the blocks' cliques together and the factorization
                // cost explodes (observed 4-5x on synthesis problems).
                let col = &mut cols[*j - 1];
                let start = col.len();
                col.extend((0..t).map(|k| (offset + k, 0.0)));
                for &(r, c, v) in entries {
                    let scaled = if r == c { v } else { rt2 * v };
                    col[start + svec_index(r, c)].1 = scaled;
                }
            }
        }
        offset += t;
    }

    let mut colptr = Vec::with_capacity(m + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut cols {
        col.sort_by_key(|e| e.0);
        for &(row, v) in col.iter() {
            rowval.push(row);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(total_rows, m, colptr, rowval, nzval);
    let p_zero = CscMatrix::new(m, m, vec![0; m + 1], Vec::new(), Vec::new());
    let cones: Vec<SupportedConeT<f64>> =
        p.blocks.iter().map(|b| SupportedConeT::PSDTriangleConeT(b.dim)).collect();

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(tol.max_iter)
        .tol_feas(tol.feas)
        .tol_gap_abs(tol.gap)
        .tol_gap_rel(tol.gap)
        // Supernodal LDL; the scalar default is several times slower on the
        // dense KKT blocks that semidefinite cones produce.
        .direct_solve_method("faer".to_string())
        // Our blocks are structurally dense, so decomposition analysis is
        // pure per-solve overhead.
        .chordal_decomposition_enable(false)
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e}")))?;

    let mut solver = DefaultSolver::new(&p_zero, &p.cost, &a, &b_vec, &cones, settings)
        .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
    solver.solve();

    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::AlmostOptimal,
        SolverStatus::PrimalInfeasible
        | SolverStatus::DualInfeasible
        | SolverStatus::AlmostPrimalInfeasible
        | SolverStatus::AlmostDualInfeasible => SolveStatus::Infeasible,
        other => SolveStatus::Failed(format!("{other:?}")),
    };

    Ok(SdpSolution {
        status,
        x: solver.solution.x.clone(),
        objective: solver.solution.obj_val,
        iterations: solver.info.iterations,
        solve_time_s: solver.info.solve_time,
    })
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn sym_eig_max(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn sym_eig_min(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Per-block feasibility residuals `lambda_max(F(x))` at the candidate `x`,
/// computed independently of the solver. Nonpositive means satisfied.
pub fn residual(p: &SdpProblem, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.num_vars {
        return Err(Error::dim(format!(
            "candidate has {} entries for {} variables",
            x.len(),
            p.num_vars
        )));
    }
    Ok(p.blocks.iter().map(|b| sym_eig_max(&b.eval(x))).collect())
}

/// Serialize to the plain-text interchange format. Floats are written in
/// shortest round-trip form, so `import(&export(p)) == p` bit-exactly.
pub fn export(p: &SdpProblem) -> String {
    let mut out = String::new();
    out.push_str("lmi-sdp 1\n");
    let _ = writeln!(out, "vars {}", p.num_vars);
    let _ = writeln!(out, "blocks {}", p.blocks.len());
    out.push_str("dims");
    for b in &p.blocks {
        let _ = write!(out, " {}", b.dim);
    }
    out.push('\n');
    out.push_str("cost");
    for c in &p.cost {
        let _ = write!(out, " {c}");
    }
    out.push('\n');
    for (i, name) in p.var_names.iter().enumerate() {
        if !name.is_empty() {
            let _ = writeln!(out, "name {i} {name}");
        }
    }
    for (bi, block) in p.blocks.iter().enumerate() {
        for (j, entries) in &block.terms {
            for &(r, c, v) in entries {
                let _ = writeln!(out, "entry {bi} {j} {r} {c} {v}");
            }
        }
    }
    out
}

/// Parse the plain-text format produced by [`export`].
pub fn import(text: &str) -> Result<SdpProblem> {
    let err = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate();

    let (ln, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
    if header.trim() != "lmi-sdp 1" {
        return Err(err(ln + 1, "expected header 'lmi-sdp 1'"));
    }

    let mut num_vars: Option<usize> = None;
    let mut dims: Vec<usize> = Vec::new();
    let mut declared_blocks: Option<usize> = None;
    let mut cost: Option<Vec<f64>> = None;
    let mut names: Vec<(usize, String)> = Vec::new();
    let mut builders: Vec<LmiBuilder> = Vec::new();

    for (ln0, raw) in lines {
        let ln = ln0 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let key = tok.next().unwrap();
        match key {
            "vars" => {
                let v: usize = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(ln, "vars needs a count"))?;
                num_vars = Some(v);
            }
            "blocks" => {
                let v: usize = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(ln, "blocks needs a count"))?;
                declared_blocks = Some(v);
            }
            "dims" => {
                for t in tok {
                    let d: usize =
                        t.parse().map_err(|_| err(ln, "dims entries must be integers"))?;
                    if d == 0 {
                        return Err(err(ln, "block dimension must be positive"));
                    }
                    dims.push(d);
                }
                builders = dims.iter().map(|d| LmiBuilder::new(*d)).collect();
            }
            "cost" => {
                let parsed: std::result::Result<Vec<f64>, _> =
                    tok.map(str::parse::<f64>).collect();
                cost = Some(parsed.map_err(|_| err(ln, "cost entries must be floats"))?);
            }
            "name" => {
                let idx: usize = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(ln, "name needs an index"))?;
                let rest = tok.collect::<Vec<_>>().join(" ");
                names.push((idx, rest));
            }
            "entry" => {
                let mut next_usize = |what: &str| -> Result<usize> {
                    tok.next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(ln, &format!("entry needs {what}")))
                };
                let b = next_usize("a block index")?;
                let j = next_usize("a term index")?;
                let r = next_usize("a row")?;
                let c = next_usize("a column")?;
                let v: f64 = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(ln, "entry needs a value"))?;
                let builder = builders
                    .get_mut(b)
                    .ok_or_else(|| err(ln, "entry references an undeclared block"))?;
                builder.push(j, r, c, v).map_err(|e| err(ln, &e.to_string()))?;
            }
            other => return Err(err(ln, &format!("unknown directive '{other}'"))),
        }
    }

    let num_vars = num_vars.ok_or_else(|| err(0, "missing 'vars' line"))?;
    let cost = cost.ok_or_else(|| err(0, "missing 'cost' line"))?;
    if let Some(db) = declared_blocks {
        if db != dims.len() {
            return Err(err(0, "blocks count disagrees with dims line"));
        }
    }
    let mut p = SdpProblem::new(num_vars, cost)?;
    for b in builders {
        p.add_block(b.finish())?;
    }
    for (i, name) in names {
        if i >= num_vars {
            return Err(err(0, "name index out of range"));
        }
        p.set_var_name(i, name);
    }
    Ok(p)
}
