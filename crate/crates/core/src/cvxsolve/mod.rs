//! Convex subproblems: minimize a sum of nuclear norms of linear matrix maps
//! subject to Hermitian lower bounds on further linear maps, with optional
//! zero patterns on the variables.
//!
//! The precoder subproblem fixes the receive filters and optimizes `V`; the
//! zero-forcer subproblem is the mirror image. Both are posed as a generic
//! [`NuclearLmiProblem`] and handed to the splitting solver in [`admm`].

mod admm;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellularConfig, ChannelSet, SystemConfig};
use crate::numerics::{self, ComplexMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixVar {
    pub rows: usize,
    pub cols: usize,
}

/// Entries `rows` of column `col` of variable `var` are fixed to zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroConstraint {
    pub var: usize,
    pub rows: Vec<usize>,
    pub col: usize,
}

/// Contribution `coef * X[var]` placed at `(row_offset, col_offset)` of a term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub var: usize,
    pub coef: ComplexMatrix,
    pub row_offset: usize,
    pub col_offset: usize,
}

/// A linear map from the variables to a `rows x cols` matrix, given as a sum of placed pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub rows: usize,
    pub cols: usize,
    pub pieces: Vec<Piece>,
}

impl LinearMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, pieces: Vec::new() }
    }

    pub fn with_piece(mut self, var: usize, coef: ComplexMatrix, row_offset: usize, col_offset: usize) -> Self {
        self.pieces.push(Piece { var, coef, row_offset, col_offset });
        self
    }

    pub fn eval(&self, vars: &[ComplexMatrix]) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.rows, self.cols);
        for p in &self.pieces {
            let block = &p.coef * &vars[p.var];
            for j in 0..block.cols() {
                for i in 0..block.rows() {
                    let (r, c) = (p.row_offset + i, p.col_offset + j);
                    out.set(r, c, out.get(r, c) + block.get(i, j));
                }
            }
        }
        out
    }
}

/// `minimize sum_t ||N_t(X)||_*  s.t.  herm(S_t(X)) >= eps I`, optionally
/// `S_t(X) = S_t(X)^H`, and the listed entries of `X` are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuclearLmiProblem {
    pub vars: Vec<MatrixVar>,
    pub nuclear_terms: Vec<LinearMap>,
    pub lmi_terms: Vec<LinearMap>,
    pub eps: f64,
    pub zero_constraints: Vec<ZeroConstraint>,
    pub hermitian: bool,
}

impl NuclearLmiProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::contract(format!("eps must be positive, got {}", self.eps)));
        }
        for (name, terms) in [("nuclear", &self.nuclear_terms), ("lmi", &self.lmi_terms)] {
            for (t, term) in terms.iter().enumerate() {
                if name == "lmi" && term.rows != term.cols {
                    return Err(Error::contract(format!("lmi term {t} is {}x{}, not square", term.rows, term.cols)));
                }
                for p in &term.pieces {
                    let var = self
                        .vars
                        .get(p.var)
                        .ok_or_else(|| Error::contract(format!("{name} term {t} references missing variable {}", p.var)))?;
                    if p.coef.cols() != var.rows
                        || p.row_offset + p.coef.rows() > term.rows
                        || p.col_offset + var.cols > term.cols
                    {
                        return Err(Error::contract(format!(
                            "{name} term {t}: piece {}x{} on variable {}x{} at ({}, {}) does not fit a {}x{} output",
                            p.coef.rows(),
                            p.coef.cols(),
                            var.rows,
                            var.cols,
                            p.row_offset,
                            p.col_offset,
                            term.rows,
                            term.cols
                        )));
                    }
                }
            }
        }
        for z in &self.zero_constraints {
            let ok = self.vars.get(z.var).is_some_and(|v| z.col < v.cols && z.rows.iter().all(|&r| r < v.rows));
            if !ok {
                return Err(Error::contract(format!("zero constraint out of range for variable {}", z.var)));
            }
        }
        Ok(())
    }

    /// Free rows of every column of every variable.
    fn supports(&self) -> Vec<Vec<Vec<usize>>> {
        self.vars
            .iter()
            .enumerate()
            .map(|(v, var)| {
                (0..var.cols)
                    .map(|c| {
                        (0..var.rows)
                            .filter(|r| {
                                !self.zero_constraints.iter().any(|z| z.var == v && z.col == c && z.rows.contains(r))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn objective(&self, vars: &[ComplexMatrix]) -> Result<f64> {
        self.nuclear_terms.iter().map(|t| numerics::nuclear_norm(&t.eval(vars))).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    /// Writes the problem as JSON for cross-checking with an external modeling tool.
    pub fn dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    /// Largest constraint violation of the returned point.
    pub primal_feasibility: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "status {:?} after {} iterations, objective {:.6e}, violation {:.2e}",
            self.status, self.iterations, self.objective, self.primal_feasibility
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub obj_rtol: f64,
    /// Initial penalty, in units of `1 / eps`.
    pub rho: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub alpha: f64,
    pub check_every: usize,
    pub adapt_every: usize,
    /// Largest relative change the rank polish may make.
    pub polish_rtol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            eps_abs: 1e-10,
            eps_rel: 1e-8,
            obj_rtol: 1e-8,
            rho: 1.0,
            alpha: 1.6,
            check_every: 10,
            adapt_every: 50,
            polish_rtol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub vars: Vec<ComplexMatrix>,
    pub report: SolveReport,
}

/// Solves a generic problem. Infeasibility is reported as [`Error::Infeasible`]
/// with round 0; callers running several rounds rewrite the index.
pub fn solve(problem: &NuclearLmiProblem, warm_start: Option<&[ComplexMatrix]>, settings: &SolverSettings) -> Result<Solution> {
    let raw = admm::solve(problem, warm_start, settings)?;
    match raw.vars {
        Some(vars) => Ok(Solution { vars, report: raw.report }),
        None => Err(Error::Infeasible { round: 0, detail: raw.report.to_string() }),
    }
}

fn check_filters(ch: &ChannelSet, fixed: &[ComplexMatrix], rows: usize, what: &str) -> Result<usize> {
    if fixed.len() != ch.users {
        return Err(Error::contract(format!("expected {} {what}, got {}", ch.users, fixed.len())));
    }
    let d = fixed.first().map_or(0, |m| m.cols());
    for (k, m) in fixed.iter().enumerate() {
        if m.shape() != (rows, d) || d == 0 {
            return Err(Error::contract(format!("{what} {k} is {}x{}, expected {rows}x{d}", m.rows(), m.cols())));
        }
        if numerics::numerical_rank(m)? < d {
            return Err(Error::Degenerate { what: format!("{what} not full column rank"), user: Some(k) });
        }
    }
    Ok(d)
}

/// Precoder subproblem with receivers `u` fixed; variables are `V_0..V_{K-1}`.
pub fn precoder_problem(ch: &ChannelSet, u: &[ComplexMatrix], eps: f64, streams: usize) -> Result<NuclearLmiProblem> {
    let d = check_filters(ch, u, ch.rx_antennas, "receive filters")?;
    if d != streams {
        return Err(Error::contract(format!("receive filters carry {d} streams, config says {streams}")));
    }
    let k_users = ch.users;
    let vars = vec![MatrixVar { rows: ch.tx_antennas, cols: d }; k_users];
    let mut nuclear_terms = Vec::new();
    let mut lmi_terms = Vec::new();
    for k in 0..k_users {
        let uh = u[k].adjoint();
        let mut j = LinearMap::new(d, (k_users - 1) * d);
        for (pos, l) in (0..k_users).filter(|&l| l != k).enumerate() {
            j = j.with_piece(l, &uh * ch.get(k, l), 0, pos * d);
        }
        if k_users > 1 {
            nuclear_terms.push(j);
        }
        lmi_terms.push(LinearMap::new(d, d).with_piece(k, &uh * ch.get(k, k), 0, 0));
    }
    Ok(NuclearLmiProblem { vars, nuclear_terms, lmi_terms, eps, zero_constraints: Vec::new(), hermitian: true })
}

/// Zero-forcer subproblem with precoders `v` fixed; variables are `U_0..U_{K-1}`.
///
/// Each term is posed on the adjoint (`J_k^H`, `S_k^H`), which is linear in
/// `U_k`; nuclear norms and the Hermitian constraint are unaffected.
pub fn zeroforcer_problem(ch: &ChannelSet, v: &[ComplexMatrix], eps: f64, streams: usize) -> Result<NuclearLmiProblem> {
    let d = check_filters(ch, v, ch.tx_antennas, "precoders")?;
    if d != streams {
        return Err(Error::contract(format!("precoders carry {d} streams, config says {streams}")));
    }
    let k_users = ch.users;
    let vars = vec![MatrixVar { rows: ch.rx_antennas, cols: d }; k_users];
    let mut nuclear_terms = Vec::new();
    let mut lmi_terms = Vec::new();
    for k in 0..k_users {
        if k_users > 1 {
            let c = crate::ia_core::interference_columns(ch, v, k);
            nuclear_terms.push(LinearMap::new((k_users - 1) * d, d).with_piece(k, c.adjoint(), 0, 0));
        }
        let dk = ch.get(k, k) * &v[k];
        lmi_terms.push(LinearMap::new(d, d).with_piece(k, dk.adjoint(), 0, 0));
    }
    Ok(NuclearLmiProblem { vars, nuclear_terms, lmi_terms, eps, zero_constraints: Vec::new(), hermitian: true })
}

/// Precoder subproblem with the per-user block structure of a cellular system:
/// column `u` of `V_k` may only use the antennas of user `u`.
pub fn cellular_precoder_problem(ch: &ChannelSet, u: &[ComplexMatrix], cfg: &CellularConfig) -> Result<NuclearLmiProblem> {
    let sys = cfg.system();
    let mut problem = precoder_problem(ch, u, sys.eps, sys.streams)?;
    for k in 0..ch.users {
        for col in 0..sys.streams {
            let allowed = cfg.user_rows(col);
            let rows: Vec<usize> = (0..sys.tx_antennas).filter(|r| !allowed.contains(r)).collect();
            if !rows.is_empty() {
                problem.zero_constraints.push(ZeroConstraint { var: k, rows, col });
            }
        }
    }
    Ok(problem)
}

pub fn solve_precoders(ch: &ChannelSet, u_fixed: &[ComplexMatrix], cfg: &SystemConfig) -> Result<Solution> {
    solve_precoders_with(ch, u_fixed, cfg, None, &SolverSettings::default())
}

pub fn solve_precoders_with(
    ch: &ChannelSet,
    u_fixed: &[ComplexMatrix],
    cfg: &SystemConfig,
    warm_start: Option<&[ComplexMatrix]>,
    settings: &SolverSettings,
) -> Result<Solution> {
    let problem = precoder_problem(ch, u_fixed, cfg.eps, cfg.streams)?;
    solve(&problem, warm_start, settings)
}

pub fn solve_zeroforcers(ch: &ChannelSet, v_fixed: &[ComplexMatrix], cfg: &SystemConfig) -> Result<Solution> {
    solve_zeroforcers_with(ch, v_fixed, cfg, None, &SolverSettings::default())
}

pub fn solve_zeroforcers_with(
    ch: &ChannelSet,
    v_fixed: &[ComplexMatrix],
    cfg: &SystemConfig,
    warm_start: Option<&[ComplexMatrix]>,
    settings: &SolverSettings,
) -> Result<Solution> {
    let problem = zeroforcer_problem(ch, v_fixed, cfg.eps, cfg.streams)?;
    solve(&problem, warm_start, settings)
}

pub fn solve_precoders_cellular(ch: &ChannelSet, u_fixed: &[ComplexMatrix], cfg: &CellularConfig) -> Result<Solution> {
    solve_precoders_cellular_with(ch, u_fixed, cfg, None, &SolverSettings::default())
}

pub fn solve_precoders_cellular_with(
    ch: &ChannelSet,
    u_fixed: &[ComplexMatrix],
    cfg: &CellularConfig,
    warm_start: Option<&[ComplexMatrix]>,
    settings: &SolverSettings,
) -> Result<Solution> {
    let problem = cellular_precoder_problem(ch, u_fixed, cfg)?;
    solve(&problem, warm_start, settings)
}
