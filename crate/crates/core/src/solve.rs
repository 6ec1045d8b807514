//! Sparse solvers: direct LU with partial pivoting (faer), and BiCGSTAB
//! preconditioned by ILU(0) for very large grids.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::{Conj, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Direct,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Forces a solver; by default the direct solver is used up to `direct_limit` unknowns.
    pub kind: Option<SolverKind>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub direct_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { kind: None, tolerance: 1e-10, max_iterations: 10_000, direct_limit: 4_000_000 }
    }
}

impl SolverOptions {
    fn kind_for(&self, n: usize) -> SolverKind {
        self.kind.unwrap_or(if n <= self.direct_limit { SolverKind::Direct } else { SolverKind::Iterative })
    }
}

/// Symbolic LU analysis, reusable for every matrix with the same pattern.
#[derive(Clone, Debug)]
pub struct LuPattern {
    symbolic: SymbolicLu<usize>,
    nnz: usize,
}

impl LuPattern {
    pub fn new(matrix: &SparseMatrix) -> Result<Self> {
        let a = matrix.to_faer()?;
        let symbolic = SymbolicLu::try_new(a.symbolic()).map_err(|e| Error::Singular(format!("{e:?}")))?;
        Ok(Self { symbolic, nnz: matrix.nnz() })
    }
}

enum Inner {
    Direct(Lu<usize, f64>),
    Iterative(Ilu0),
}

/// Factorized matrix; solves may run concurrently.
pub struct Factorization {
    matrix: SparseMatrix,
    norm: f64,
    inner: Inner,
    options: SolverOptions,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("size", &self.matrix.rows())
            .field("kind", &self.kind())
            .finish()
    }
}

impl Factorization {
    pub fn new(matrix: &SparseMatrix, options: SolverOptions) -> Result<Self> {
        Self::build(matrix, options, None)
    }

    /// Direct factorization reusing a symbolic analysis of the same pattern.
    pub fn with_pattern(matrix: &SparseMatrix, options: SolverOptions, pattern: &LuPattern) -> Result<Self> {
        Self::build(matrix, options, Some(pattern))
    }

    fn build(matrix: &SparseMatrix, options: SolverOptions, pattern: Option<&LuPattern>) -> Result<Self> {
        let n = matrix.rows();
        if n != matrix.cols() {
            return Err(Error::Dimension(format!("matrix is {}×{}", n, matrix.cols())));
        }
        let inner = match options.kind_for(n) {
            SolverKind::Direct => {
                let a = matrix.to_faer()?;
                let symbolic = match pattern {
                    Some(p) if p.nnz == matrix.nnz() => p.symbolic.clone(),
                    _ => SymbolicLu::try_new(a.symbolic()).map_err(|e| Error::Singular(format!("{e:?}")))?,
                };
                let lu = Lu::try_new_with_symbolic(symbolic, a.as_ref())
                    .map_err(|e| Error::Singular(format!("{e:?}")))?;
                Inner::Direct(lu)
            }
            SolverKind::Iterative => Inner::Iterative(Ilu0::new(matrix)?),
        };
        Ok(Self { matrix: matrix.clone(), norm: matrix.norm_inf(), inner, options })
    }

    pub fn kind(&self) -> SolverKind {
        match self.inner {
            Inner::Direct(_) => SolverKind::Direct,
            Inner::Iterative(_) => SolverKind::Iterative,
        }
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Backward-error bound: `‖Ax − r‖∞ ≤ tol·(‖r‖∞ + ‖A‖∞‖x‖∞)`.
    pub fn accepts(&self, x: &[f64], rhs: &[f64]) -> bool {
        let (res, bound) = self.residual(x, rhs);
        res <= bound
    }

    fn residual(&self, x: &[f64], rhs: &[f64]) -> (f64, f64) {
        if x.iter().any(|v| !v.is_finite()) {
            return (f64::INFINITY, 0.0);
        }
        let ax = self.matrix.matvec(x);
        let res = ax.iter().zip(rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let bound = self.options.tolerance * (inf_norm(rhs) + self.norm * inf_norm(x));
        (res, bound)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.size();
        if rhs.len() != n {
            return Err(Error::Dimension(format!("rhs has length {}, expected {n}", rhs.len())));
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("non-finite right-hand side".into()));
        }
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; n]);
        }
        match &self.inner {
            Inner::Direct(lu) => {
                let mut x = direct_solve(lu, rhs);
                for _ in 0..3 {
                    if self.accepts(&x, rhs) {
                        return Ok(x);
                    }
                    let ax = self.matrix.matvec(&x);
                    let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
                    let d = direct_solve(lu, &r);
                    x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += di);
                }
                let (res, bound) = self.residual(&x, rhs);
                if !res.is_finite() {
                    return Err(Error::Singular("non-finite solution".into()));
                }
                if res <= bound {
                    Ok(x)
                } else {
                    Err(Error::NoConvergence { iterations: 3, residual: res / bound.max(f64::MIN_POSITIVE) })
                }
            }
            Inner::Iterative(ilu) => bicgstab(&self.matrix, ilu, rhs, &self.options),
        }
    }

    /// Solves `Aᵀx = rhs`.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.size();
        if rhs.len() != n {
            return Err(Error::Dimension(format!("rhs has length {}, expected {n}", rhs.len())));
        }
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; n]);
        }
        let at = self.matrix.transpose();
        match &self.inner {
            Inner::Direct(lu) => {
                let mut x = direct_solve_transpose(lu, rhs);
                for _ in 0..3 {
                    let ax = at.matvec(&x);
                    let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
                    let bound = self.options.tolerance * (inf_norm(rhs) + self.norm * inf_norm(&x));
                    if inf_norm(&r) <= bound {
                        return Ok(x);
                    }
                    let d = direct_solve_transpose(lu, &r);
                    x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += di);
                }
                if x.iter().all(|v| v.is_finite()) {
                    Ok(x)
                } else {
                    Err(Error::Singular("non-finite solution".into()))
                }
            }
            Inner::Iterative(_) => bicgstab(&at, &Ilu0::new(&at)?, rhs, &self.options),
        }
    }

    /// Independent solves against the same factorization, in parallel.
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rhs.par_iter().map(|r| self.solve(r)).collect()
    }
}

fn direct_solve(lu: &Lu<usize, f64>, rhs: &[f64]) -> Vec<f64> {
    let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    lu.solve_in_place_with_conj(Conj::No, x.as_mut());
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

fn direct_solve_transpose(lu: &Lu<usize, f64>, rhs: &[f64]) -> Vec<f64> {
    let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    lu.solve_transpose_in_place_with_conj(Conj::No, x.as_mut());
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
#[derive(Clone, Debug)]
pub struct Ilu0 {
    lu: SparseMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let n = a.rows();
        let mut rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
            .map(|i| {
                let (c, v) = a.row(i);
                (c.to_vec(), v.to_vec())
            })
            .collect();
        let mut diag = vec![usize::MAX; n];
        for (i, (cols, _)) in rows.iter().enumerate() {
            diag[i] = cols.binary_search(&i).map_err(|_| Error::Singular(format!("no diagonal in row {i}")))?;
        }
        for i in 0..n {
            let (head, tail) = rows.split_at_mut(i);
            let (cols_i, vals_i) = &mut tail[0];
            for p in 0..diag[i] {
                let k = cols_i[p];
                let (cols_k, vals_k) = &head[k];
                let pivot = vals_k[diag[k]];
                if pivot == 0.0 {
                    return Err(Error::Singular(format!("zero pivot in row {k}")));
                }
                vals_i[p] /= pivot;
                let lik = vals_i[p];
                for q in diag[k] + 1..cols_k.len() {
                    if let Ok(pos) = cols_i.binary_search(&cols_k[q]) {
                        vals_i[pos] -= lik * vals_k[q];
                    }
                }
            }
            if vals_i[diag[i]] == 0.0 {
                return Err(Error::Singular(format!("zero pivot in row {i}")));
            }
        }
        let lu = SparseMatrix::from_rows(
            n,
            rows.into_iter().map(|(c, v)| c.into_iter().zip(v).collect()).collect(),
        );
        Ok(Self { lu, diag })
    }

    /// Applies `(LU)⁻¹`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len();
        let mut y = r.to_vec();
        for i in 0..n {
            let (cols, vals) = self.lu.row(i);
            let mut s = y[i];
            for p in 0..self.diag[i] {
                s -= vals[p] * y[cols[p]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let (cols, vals) = self.lu.row(i);
            let mut s = y[i];
            for p in self.diag[i] + 1..cols.len() {
                s -= vals[p] * y[cols[p]];
            }
            y[i] = s / vals[self.diag[i]];
        }
        y
    }
}

/// Right-preconditioned BiCGSTAB with relative residual tolerance.
fn bicgstab(a: &SparseMatrix, m: &Ilu0, b: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 1..=opts.max_iterations {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = m.apply(&p);
        v = a.matvec(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) <= opts.tolerance * bnorm {
            x.iter_mut().zip(&ph).for_each(|(xi, pi)| *xi += alpha * pi);
            return Ok(x);
        }
        let sh = m.apply(&s);
        let t = a.matvec(&sh);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        let rel = norm2(&r) / bnorm;
        if rel <= opts.tolerance {
            return Ok(x);
        }
        if !rel.is_finite() || omega == 0.0 {
            return Err(Error::NoConvergence { iterations: it, residual: rel });
        }
    }
    let ax = a.matvec(&x);
    let rel = norm2(&b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect::<Vec<_>>()) / bnorm;
    if rel <= opts.tolerance {
        Ok(x)
    } else {
        Err(Error::NoConvergence { iterations: opts.max_iterations, residual: rel })
    }
}
