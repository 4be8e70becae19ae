//! Operator-splitting solver for [`NuclearLmiProblem`].
//!
//! The problem is rewritten over the stacked term outputs `o = L x`:
//!
//! ```text
//! minimize  sum_t ||Z_t||_*   subject to  o in range(L),  W_t = W_t^H,  W_t >= eps I
//! ```
//!
//! where `o` stacks every nuclear block `Z_t` and every LMI block `W_t`. The
//! complex unknowns are embedded as real pairs, so Hermitian symmetry of the
//! LMI blocks is a real-linear constraint and is folded into the
//! parameterization (`x = N eta`). ADMM then alternates an orthogonal
//! projection onto `range(L N)` with the separable proximal step: singular
//! value thresholding on nuclear blocks and eigenvalue clamping on LMI blocks.
//!
//! The linear structure decouples into connected components (every precoder
//! column only touches a few outputs), and the projector is applied per
//! component from a precomputed orthonormal basis.
//!
//! After the iteration stops the prox-side iterate is mapped back to `x` by
//! least squares, a polish step forces each nuclear block onto the column
//! space that the thresholding identified, and finally `x` is scaled so that
//! the tightest LMI block sits exactly at `eps`. The objective and all
//! constraints are homogeneous of degree one in `x`, so this scaling keeps
//! feasibility exact.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{NuclearLmiProblem, SolveReport, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix};

const STRUCT_RTOL: f64 = 1e-12;

struct Component {
    unknowns: Vec<usize>,
    outputs: Vec<usize>,
    /// Orthonormal basis of the reachable outputs (`outputs x r`).
    basis: DMatrix<f64>,
    /// Least-squares map from outputs back to unknowns (`unknowns x outputs`).
    recover: DMatrix<f64>,
}

pub(crate) struct Compiled {
    /// `(var, row, col)` of each complex unknown.
    unknowns: Vec<(usize, usize, usize)>,
    var_shapes: Vec<(usize, usize)>,
    term_shapes: Vec<(usize, usize)>,
    term_offsets: Vec<usize>,
    n_nuclear: usize,
    eps: f64,
    hermitian: bool,
    l_real: DMatrix<f64>,
    herm_rows: Vec<DVector<f64>>,
    components: Vec<Component>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// Groups row indices and column indices of `rows` into independent blocks.
/// Returns `(columns, rows)` per block; columns touched by no row are omitted.
fn blocks(rows: &[&[f64]], n: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut uf = UnionFind::new(n);
    let mut first = vec![None; rows.len()];
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                match first[r] {
                    None => first[r] = Some(c),
                    Some(f) => uf.union(f, c),
                }
            }
        }
    }
    let mut touched = vec![false; n];
    for row in rows {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                touched[c] = true;
            }
        }
    }
    let mut index = std::collections::HashMap::new();
    let mut out: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for c in 0..n {
        if touched[c] {
            let root = uf.find(c);
            let slot = *index.entry(root).or_insert_with(|| {
                out.push((Vec::new(), Vec::new()));
                out.len() - 1
            });
            out[slot].0.push(c);
        }
    }
    for (r, f) in first.iter().enumerate() {
        if let Some(c) = f {
            let slot = index[&uf.find(*c)];
            out[slot].1.push(r);
        }
    }
    out
}

/// Thin SVD of a real matrix with columns sorted by descending singular value.
fn real_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        return (DMatrix::zeros(rows, 0), Vec::new(), DMatrix::zeros(cols, 0));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut uu = DMatrix::zeros(rows, p);
    let mut vv = DMatrix::zeros(cols, p);
    let mut s = Vec::with_capacity(p);
    for (dst, &src) in order.iter().enumerate() {
        uu.set_column(dst, &u.column(src));
        vv.set_column(dst, &v.column(src));
        s.push(svd.singular_values[src]);
    }
    (uu, s, vv)
}

/// Orthonormal basis of the null space of `e` (`cols x k`).
fn null_space(e: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = e.shape();
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    // pad to at least square so the SVD returns a full right basis
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, rows).copy_from(e);
        p
    } else {
        e.clone()
    };
    let (_, s, v) = real_svd(&padded);
    let top = s.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..cols).filter(|&i| s[i] <= STRUCT_RTOL * top).collect();
    let mut out = DMatrix::zeros(cols, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        out.set_column(dst, &v.column(src));
    }
    out
}

/// Pseudo-inverse applied to `b`: minimum-norm least-squares solution.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (u, s, v) = real_svd(a);
    let top = s.first().copied().unwrap_or(0.0);
    let mut out = DVector::zeros(a.ncols());
    for (i, &si) in s.iter().enumerate() {
        if si > STRUCT_RTOL * top && si > 0.0 {
            let coef = u.column(i).dot(b) / si;
            out.axpy(coef, &v.column(i), 1.0);
        }
    }
    out
}

impl Compiled {
    pub(crate) fn new(problem: &NuclearLmiProblem) -> Result<Self> {
        problem.validate()?;
        let supports = problem.supports();
        let mut unknowns = Vec::new();
        let mut unknown_index: Vec<Vec<Vec<Option<usize>>>> = Vec::with_capacity(problem.vars.len());
        for (v, var) in problem.vars.iter().enumerate() {
            let mut idx = vec![vec![None; var.cols]; var.rows];
            for c in 0..var.cols {
                for &r in &supports[v][c] {
                    idx[r][c] = Some(unknowns.len());
                    unknowns.push((v, r, c));
                }
            }
            unknown_index.push(idx);
        }
        let terms: Vec<_> = problem.nuclear_terms.iter().chain(&problem.lmi_terms).collect();
        let term_shapes: Vec<(usize, usize)> = terms.iter().map(|t| (t.rows, t.cols)).collect();
        let mut term_offsets = Vec::with_capacity(terms.len());
        let mut m = 0;
        for t in &terms {
            term_offsets.push(m);
            m += t.rows * t.cols;
        }
        let n = unknowns.len();

        let mut l = DMatrix::<Complex64>::zeros(m, n);
        for (ti, term) in terms.iter().enumerate() {
            for piece in &term.pieces {
                let var = &problem.vars[piece.var];
                for c in 0..var.cols {
                    for i in 0..piece.coef.rows() {
                        let e = term_offsets[ti] + (piece.col_offset + c) * term.rows + piece.row_offset + i;
                        for &r in &supports[piece.var][c] {
                            let u = unknown_index[piece.var][r][c].expect("supported entry");
                            l[(e, u)] += piece.coef.get(i, r);
                        }
                    }
                }
            }
        }
        let mut l_real = DMatrix::<f64>::zeros(2 * m, 2 * n);
        for e in 0..m {
            for u in 0..n {
                let a = l[(e, u)];
                if a.re != 0.0 || a.im != 0.0 {
                    l_real[(2 * e, 2 * u)] = a.re;
                    l_real[(2 * e, 2 * u + 1)] = -a.im;
                    l_real[(2 * e + 1, 2 * u)] = a.im;
                    l_real[(2 * e + 1, 2 * u + 1)] = a.re;
                }
            }
        }

        let n_nuclear = problem.nuclear_terms.len();
        let mut herm_rows = Vec::new();
        if problem.hermitian {
            for (li, term) in problem.lmi_terms.iter().enumerate() {
                let off = term_offsets[n_nuclear + li];
                let at = |i: usize, j: usize| off + j * term.rows + i;
                for j in 0..term.rows {
                    for i in 0..=j {
                        let (a, b) = (at(i, j), at(j, i));
                        if i == j {
                            herm_rows.push(l_real.row(2 * a + 1).transpose());
                        } else {
                            herm_rows.push((l_real.row(2 * a) - l_real.row(2 * b)).transpose());
                            herm_rows.push((l_real.row(2 * a + 1) + l_real.row(2 * b + 1)).transpose());
                        }
                    }
                }
            }
            herm_rows.retain(|r| r.iter().any(|&v| v != 0.0));
        }

        let mut compiled = Self {
            unknowns,
            var_shapes: problem.vars.iter().map(|v| (v.rows, v.cols)).collect(),
            term_shapes,
            term_offsets,
            n_nuclear,
            eps: problem.eps,
            hermitian: problem.hermitian,
            l_real,
            herm_rows,
            components: Vec::new(),
        };
        compiled.components = compiled.build_components();
        Ok(compiled)
    }

    fn build_components(&self) -> Vec<Component> {
        let n = self.l_real.ncols();
        if n == 0 {
            return Vec::new();
        }
        let lt = self.l_real.transpose();
        let mut rows: Vec<&[f64]> = lt.as_slice().chunks(n).collect();
        let n_out = rows.len();
        rows.extend(self.herm_rows.iter().map(|r| r.as_slice()));
        blocks(&rows, n)
            .into_iter()
            .map(|(unknowns, row_ids)| {
                let outputs: Vec<usize> = row_ids.iter().copied().filter(|&r| r < n_out).collect();
                let herm: Vec<usize> = row_ids.iter().copied().filter(|&r| r >= n_out).collect();
                let e = DMatrix::from_fn(herm.len(), unknowns.len(), |i, j| rows[herm[i]][unknowns[j]]);
                let null = null_space(&e);
                let lc = DMatrix::from_fn(outputs.len(), unknowns.len(), |i, j| self.l_real[(outputs[i], unknowns[j])]);
                let reduced = &lc * &null;
                let (u, s, v) = real_svd(&reduced);
                let top = s.first().copied().unwrap_or(0.0);
                let r = s.iter().filter(|&&x| x > STRUCT_RTOL * top && x > 0.0).count();
                let basis = u.columns(0, r).into_owned();
                let mut pinv = DMatrix::zeros(reduced.ncols(), outputs.len());
                for i in 0..r {
                    pinv += (v.column(i) / s[i]) * u.column(i).transpose();
                }
                Component {
                    unknowns,
                    outputs,
                    basis,
                    recover: &null * pinv,
                }
            })
            .collect()
    }

    fn output_len(&self) -> usize {
        self.l_real.nrows()
    }

    /// Orthogonal projection onto the reachable outputs.
    fn project(&self, t: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for comp in &self.components {
            if comp.basis.ncols() == 0 {
                continue;
            }
            let tc = DVector::from_iterator(comp.outputs.len(), comp.outputs.iter().map(|&i| t[i]));
            let coef = comp.basis.tr_mul(&tc);
            let pc = &comp.basis * coef;
            for (k, &i) in comp.outputs.iter().enumerate() {
                out[i] = pc[k];
            }
        }
    }

    fn recover(&self, t: &[f64]) -> DVector<f64> {
        let mut xi = DVector::zeros(self.l_real.ncols());
        for comp in &self.components {
            let tc = DVector::from_iterator(comp.outputs.len(), comp.outputs.iter().map(|&i| t[i]));
            let xc = &comp.recover * tc;
            for (k, &u) in comp.unknowns.iter().enumerate() {
                xi[u] = xc[k];
            }
        }
        xi
    }

    fn apply(&self, xi: &DVector<f64>) -> Vec<f64> {
        (&self.l_real * xi).as_slice().to_vec()
    }

    pub(crate) fn vars_from_xi(&self, xi: &DVector<f64>) -> Vec<ComplexMatrix> {
        let mut vars: Vec<ComplexMatrix> = self.var_shapes.iter().map(|&(r, c)| ComplexMatrix::zeros(r, c)).collect();
        for (u, &(v, r, c)) in self.unknowns.iter().enumerate() {
            vars[v].set(r, c, Complex64::new(xi[2 * u], xi[2 * u + 1]));
        }
        vars
    }

    fn xi_from_vars(&self, vars: &[ComplexMatrix]) -> Result<DVector<f64>> {
        if vars.len() != self.var_shapes.len() || vars.iter().zip(&self.var_shapes).any(|(m, &s)| m.shape() != s) {
            return Err(Error::contract("warm start does not match the variable shapes"));
        }
        let mut xi = DVector::zeros(2 * self.unknowns.len());
        for (u, &(v, r, c)) in self.unknowns.iter().enumerate() {
            let z = vars[v].get(r, c);
            xi[2 * u] = z.re;
            xi[2 * u + 1] = z.im;
        }
        Ok(xi)
    }

    fn term(&self, t: usize, o: &[f64]) -> ComplexMatrix {
        let (rows, cols) = self.term_shapes[t];
        let off = self.term_offsets[t];
        ComplexMatrix::from_fn(rows, cols, |i, j| {
            let e = off + j * rows + i;
            Complex64::new(o[2 * e], o[2 * e + 1])
        })
    }

    fn write_term(&self, t: usize, m: &ComplexMatrix, o: &mut [f64]) {
        let (rows, cols) = self.term_shapes[t];
        let off = self.term_offsets[t];
        for j in 0..cols {
            for i in 0..rows {
                let e = off + j * rows + i;
                let z = m.get(i, j);
                o[2 * e] = z.re;
                o[2 * e + 1] = z.im;
            }
        }
    }

    fn lmi_block(&self, m: &ComplexMatrix) -> ComplexMatrix {
        if self.hermitian {
            m.hermitian_part()
        } else {
            m.clone()
        }
    }

    /// Proximal step in place. Returns the nuclear objective of the result.
    fn prox(&self, o: &mut [f64], threshold: f64) -> Result<f64> {
        let mut objective = 0.0;
        for t in 0..self.term_shapes.len() {
            let m = self.term(t, o);
            let out = if t < self.n_nuclear {
                let (z, nuc) = shrink_singular_values(&m, threshold)?;
                objective += nuc;
                z
            } else {
                clamp_eigenvalues(&self.lmi_block(&m), self.eps, self.hermitian)?
            };
            self.write_term(t, &out, o);
        }
        Ok(objective)
    }

    fn objective_at(&self, o: &[f64]) -> Result<f64> {
        (0..self.n_nuclear).map(|t| numerics::nuclear_norm(&self.term(t, o))).sum()
    }

    /// Smallest eigenvalue over all LMI blocks (of their Hermitian parts).
    fn min_lmi_eig(&self, o: &[f64]) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for t in self.n_nuclear..self.term_shapes.len() {
            lo = lo.min(numerics::min_eig_herm(&self.term(t, o).hermitian_part())?);
        }
        Ok(lo)
    }

    fn max_skew(&self, o: &[f64]) -> f64 {
        (self.n_nuclear..self.term_shapes.len())
            .map(|t| {
                let m = self.term(t, o);
                (&m - &m.adjoint()).frobenius_norm() / m.frobenius_norm().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    fn lmi_is_structurally_zero(&self) -> Option<usize> {
        (self.n_nuclear..self.term_shapes.len()).find(|&t| {
            let (rows, cols) = self.term_shapes[t];
            let off = self.term_offsets[t];
            (0..rows * cols).all(|k| {
                let e = off + k;
                self.l_real.row(2 * e).iter().all(|&v| v == 0.0) && self.l_real.row(2 * e + 1).iter().all(|&v| v == 0.0)
            })
        })
    }

    /// Rows forcing each nuclear block onto the column space (or row space,
    /// whichever gives fewer constraints) of the matching block of `o`.
    fn rank_rows(&self, o: &[f64]) -> Result<Vec<DVector<f64>>> {
        let scale = (0..self.term_shapes.len())
            .map(|t| self.term(t, o).frobenius_norm())
            .fold(self.eps, f64::max);
        let mut rows = Vec::new();
        for t in 0..self.n_nuclear {
            let (tr, tc) = self.term_shapes[t];
            let z = self.term(t, o);
            let svd = numerics::svd(&z)?;
            let r = svd.singular_values.iter().filter(|&&s| s > 1e-10 * scale).count();
            if r == tr.min(tc) {
                continue;
            }
            let off = self.term_offsets[t];
            let e = |i: usize, j: usize| off + j * tr + i;
            let mut push = |weights: &[(usize, Complex64)]| {
                let mut re = DVector::zeros(self.l_real.ncols());
                let mut im = DVector::zeros(self.l_real.ncols());
                for &(out, w) in weights {
                    let lr = self.l_real.row(2 * out).transpose();
                    let li = self.l_real.row(2 * out + 1).transpose();
                    re += &lr * w.re - &li * w.im;
                    im += &lr * w.im + &li * w.re;
                }
                rows.push(re);
                rows.push(im);
            };
            if (tr - r) * tc <= tr * (tc - r) {
                // complement of the column space: W^H Z = 0
                let comp = orthogonal_complement(&svd.left.columns(0, r), tr)?;
                for a in 0..comp.cols() {
                    for j in 0..tc {
                        let w: Vec<(usize, Complex64)> = (0..tr).map(|i| (e(i, j), comp.get(i, a).conj())).collect();
                        push(&w);
                    }
                }
            } else {
                // complement of the row space: Z W = 0
                let comp = orthogonal_complement(&svd.right.columns(0, r), tc)?;
                for a in 0..comp.cols() {
                    for i in 0..tr {
                        let w: Vec<(usize, Complex64)> = (0..tc).map(|j| (e(i, j), comp.get(j, a))).collect();
                        push(&w);
                    }
                }
            }
        }
        Ok(rows)
    }

    /// Smallest correction `delta` with `C (xi + delta) = 0`, solved per
    /// independent block of `C`.
    fn min_norm_correction(&self, constraints: &[DVector<f64>], xi: &DVector<f64>) -> DVector<f64> {
        let n = xi.len();
        let rows: Vec<&[f64]> = constraints.iter().map(|r| r.as_slice()).collect();
        let mut delta = DVector::zeros(n);
        for (cols, row_ids) in blocks(&rows, n) {
            let c = DMatrix::from_fn(row_ids.len(), cols.len(), |i, j| rows[row_ids[i]][cols[j]]);
            let xc = DVector::from_iterator(cols.len(), cols.iter().map(|&j| xi[j]));
            let sol = lstsq(&c, &(&c * xc));
            for (k, &j) in cols.iter().enumerate() {
                delta[j] = -sol[k];
            }
        }
        delta
    }
}

fn orthogonal_complement(basis: &ComplexMatrix, dim: usize) -> Result<ComplexMatrix> {
    let proj = &ComplexMatrix::identity(dim) - &basis.projector();
    let eig = numerics::herm_eig(&proj.hermitian_part())?;
    let keep: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let cols: Vec<ComplexMatrix> = keep.iter().map(|&i| eig.eigenvectors.column(i)).collect();
    let refs: Vec<&ComplexMatrix> = cols.iter().collect();
    Ok(ComplexMatrix::hcat(dim, &refs))
}

/// Singular value soft-thresholding. Returns the shrunk matrix and its nuclear norm.
pub(crate) fn shrink_singular_values(m: &ComplexMatrix, tau: f64) -> Result<(ComplexMatrix, f64)> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok((m.clone(), 0.0));
    }
    if rows == 1 || cols == 1 {
        let norm = m.frobenius_norm();
        if norm <= tau {
            return Ok((ComplexMatrix::zeros(rows, cols), 0.0));
        }
        return Ok((m.scale((norm - tau) / norm), norm - tau));
    }
    let svd = numerics::svd(m)?;
    let mut left = svd.left.clone();
    let mut nuc = 0.0;
    for (c, s) in svd.singular_values.iter().enumerate() {
        let shrunk = (s - tau).max(0.0);
        nuc += shrunk;
        let col = left.column(c).scale(shrunk);
        left.set_column(c, &col);
    }
    Ok((&left * &svd.right.adjoint(), nuc))
}

/// Projection onto `{X : herm(X) >= eps I}` (and `X = X^H` when `hermitian`).
pub(crate) fn clamp_eigenvalues(m: &ComplexMatrix, eps: f64, hermitian: bool) -> Result<ComplexMatrix> {
    let h = m.hermitian_part();
    let clamped = if m.rows() == 1 {
        ComplexMatrix::from_real_fn(1, 1, |_, _| h.get(0, 0).re.max(eps))
    } else {
        let eig = numerics::herm_eig(&h)?;
        let n = h.rows();
        let mut scaled = eig.eigenvectors.clone();
        for i in 0..n {
            let col = scaled.column(i).scale(eig.eigenvalues[i].max(eps));
            scaled.set_column(i, &col);
        }
        (&scaled * &eig.eigenvectors.adjoint()).hermitian_part()
    };
    if hermitian {
        Ok(clamped)
    } else {
        Ok(&clamped + &(m - &h))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Solver output: solution variables (absent when infeasible) and a report.
pub(crate) struct RawSolution {
    pub vars: Option<Vec<ComplexMatrix>>,
    pub report: SolveReport,
}

pub(crate) fn solve(
    problem: &NuclearLmiProblem,
    warm_start: Option<&[ComplexMatrix]>,
    settings: &SolverSettings,
) -> Result<RawSolution> {
    let c = Compiled::new(problem)?;
    let infeasible = |iterations: usize, detail: f64| RawSolution {
        vars: None,
        report: SolveReport {
            objective: f64::NAN,
            primal_feasibility: detail,
            iterations,
            status: SolveStatus::Infeasible,
        },
    };
    if c.lmi_is_structurally_zero().is_some() {
        return Ok(infeasible(0, c.eps));
    }

    let m = c.output_len();
    let mut q = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    let mut rho = settings.rho / c.eps;
    let mut warm = None;
    if let Some(w) = warm_start {
        let xi = c.xi_from_vars(w)?;
        q = c.apply(&xi);
        warm = finalize(&c, xi)?;
    }
    c.prox(&mut q, 1.0 / rho)?;

    let alpha = settings.alpha;
    let sqrt_m = (m as f64).sqrt();
    let mut q_prev = q.clone();
    let mut last_obj = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        iterations += 1;
        for i in 0..m {
            tmp[i] = q[i] - y[i];
        }
        c.project(&tmp, &mut p);
        q_prev.copy_from_slice(&q);
        for i in 0..m {
            let relaxed = alpha * p[i] + (1.0 - alpha) * q_prev[i];
            tmp[i] = relaxed + y[i];
        }
        q.copy_from_slice(&tmp);
        let obj = c.prox(&mut q, 1.0 / rho)?;
        for i in 0..m {
            let relaxed = alpha * p[i] + (1.0 - alpha) * q_prev[i];
            y[i] += relaxed - q[i];
        }

        if iterations % settings.check_every == 0 {
            let r_prim = diff_norm(&p, &q);
            let r_dual = rho * diff_norm(&q, &q_prev);
            let eps_prim = sqrt_m * settings.eps_abs + settings.eps_rel * norm(&p).max(norm(&q));
            let eps_dual = sqrt_m * settings.eps_abs + settings.eps_rel * rho * norm(&y);
            let obj_ok = (obj - last_obj).abs() <= settings.obj_rtol * obj.abs() + settings.eps_abs;
            last_obj = obj;
            if r_prim <= eps_prim && r_dual <= eps_dual && obj_ok {
                converged = true;
                break;
            }
            if iterations % settings.adapt_every == 0 {
                let ratio = (r_prim / eps_prim) / (r_dual / eps_dual).max(1e-300);
                let factor = if ratio > 10.0 {
                    (ratio.sqrt()).min(10.0)
                } else if ratio < 0.1 {
                    (ratio.sqrt()).max(0.1)
                } else {
                    1.0
                };
                if factor != 1.0 {
                    rho *= factor;
                    y.iter_mut().for_each(|v| *v /= factor);
                }
            }
        }
    }

    // back to the unknowns
    let xi0 = c.recover(&q);
    let base = finalize(&c, xi0.clone())?;
    let mut best = base;
    let mut rank_rows = c.rank_rows(&q)?;
    if !rank_rows.is_empty() {
        rank_rows.extend(c.herm_rows.iter().cloned());
        let delta = c.min_norm_correction(&rank_rows, &xi0);
        if delta.norm() <= settings.polish_rtol * xi0.norm() {
            if let Some(polished) = finalize(&c, xi0 + delta)? {
                let accept = match &best {
                    Some(b) => polished.1 <= b.1 * (1.0 + settings.polish_rtol) + settings.eps_abs,
                    None => true,
                };
                if accept {
                    best = Some(polished);
                }
            }
        }
    }

    // never return something worse than a feasible starting point
    if let Some(w) = warm {
        if best.as_ref().is_none_or(|b| w.1 < b.1) {
            best = Some(w);
        }
    }
    let Some((xi, objective, feas)) = best else {
        return Ok(infeasible(iterations, c.eps));
    };
    Ok(RawSolution {
        vars: Some(c.vars_from_xi(&xi)),
        report: SolveReport {
            objective,
            primal_feasibility: feas,
            iterations,
            status: if converged { SolveStatus::Optimal } else { SolveStatus::MaxIter },
        },
    })
}

/// Scales `xi` so the tightest LMI block sits at `eps`. Returns the scaled
/// point, its objective and its constraint violation, or `None` when no
/// positive scaling is feasible.
fn finalize(c: &Compiled, xi: DVector<f64>) -> Result<Option<(DVector<f64>, f64, f64)>> {
    let o = c.apply(&xi);
    let lo = c.min_lmi_eig(&o)?;
    let scale_ref = (c.n_nuclear..c.term_shapes.len())
        .map(|t| c.term(t, &o).frobenius_norm())
        .fold(0.0, f64::max);
    if !(lo > 1e-9 * scale_ref) || !lo.is_finite() {
        return Ok(None);
    }
    let s = c.eps / lo;
    let xi = xi * s;
    let o = c.apply(&xi);
    let objective = c.objective_at(&o)?;
    let mut violation = (c.eps - c.min_lmi_eig(&o)?).max(0.0);
    if c.hermitian {
        violation = violation.max(c.max_skew(&o));
    }
    Ok(Some((xi, objective, violation)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_value_shrinkage() {
        let m = ComplexMatrix::diag_real(&[3.0, 1.0]);
        let (z, nuc) = shrink_singular_values(&m, 2.0).unwrap();
        assert!((nuc - 1.0).abs() < 1e-14);
        assert!((&z - &ComplexMatrix::diag_real(&[1.0, 0.0])).max_abs() < 1e-14);
        let v = ComplexMatrix::from_real_fn(1, 2, |_, j| [3.0, 4.0][j]);
        let (z, nuc) = shrink_singular_values(&v, 1.0).unwrap();
        assert!((nuc - 4.0).abs() < 1e-14);
        assert!((z.get(0, 1).re - 3.2).abs() < 1e-14);
    }

    #[test]
    fn eigenvalue_clamp() {
        let m = ComplexMatrix::diag_real(&[-1.0, 2.0]);
        let c = clamp_eigenvalues(&m, 0.5, true).unwrap();
        assert!((&c - &ComplexMatrix::diag_real(&[0.5, 2.0])).max_abs() < 1e-14);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let e = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&e);
        assert_eq!(n.ncols(), 2);
        assert!((&e * &n).norm() < 1e-14);
    }

    #[test]
    fn problem_without_free_entries_is_infeasible() {
        use crate::cvxsolve::{LinearMap, MatrixVar, ZeroConstraint};
        let p = NuclearLmiProblem {
            vars: vec![MatrixVar { rows: 1, cols: 1 }],
            nuclear_terms: vec![],
            lmi_terms: vec![LinearMap::new(1, 1).with_piece(0, ComplexMatrix::identity(1), 0, 0)],
            eps: 0.1,
            zero_constraints: vec![ZeroConstraint { var: 0, rows: vec![0], col: 0 }],
            hermitian: true,
        };
        let raw = solve(&p, None, &SolverSettings::default()).unwrap();
        assert!(raw.vars.is_none());
        assert_eq!(raw.report.status, SolveStatus::Infeasible);
    }

    #[test]
    fn block_detection() {
        let r0 = [1.0, 0.0, 0.0, 2.0];
        let r1 = [0.0, 1.0, 0.0, 0.0];
        let r2 = [0.0, 0.0, 0.0, 1.0];
        let b = blocks(&[&r0, &r1, &r2], 4);
        assert_eq!(b.len(), 2);
        assert!(b.contains(&(vec![0, 3], vec![0, 2])));
        assert!(b.contains(&(vec![1], vec![1])));
    }
}
