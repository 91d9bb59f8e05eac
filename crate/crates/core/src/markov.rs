//! Finite Markov chain plumbing shared by the queueing models: a row-major
//! sparse transition matrix, a stationary-distribution solver and a
//! mean-hitting-time solver.

use crate::error::{Error, Result};

/// Row-stochastic matrix in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct SparseChain {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseChain {
    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b]
            .iter()
            .zip(&self.vals[a..b])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_defect(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.row_sum(i) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Accumulates rows one at a time; duplicate columns within a row are merged.
pub struct ChainBuilder {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    scratch: Vec<f64>,
    touched: Vec<usize>,
}

impl ChainBuilder {
    pub fn new(n: usize) -> Self {
        ChainBuilder {
            n,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            scratch: vec![0.0; n],
            touched: Vec::new(),
        }
    }

    pub fn add(&mut self, col: usize, p: f64) {
        debug_assert!(col < self.n);
        if p == 0.0 {
            return;
        }
        if self.scratch[col] == 0.0 {
            self.touched.push(col);
        }
        self.scratch[col] += p;
    }

    pub fn finish_row(&mut self) {
        self.touched.sort_unstable();
        for &c in &self.touched {
            self.cols.push(c as u32);
            self.vals.push(self.scratch[c]);
            self.scratch[c] = 0.0;
        }
        self.touched.clear();
        self.row_ptr.push(self.cols.len());
    }

    pub fn build(self) -> SparseChain {
        assert_eq!(self.row_ptr.len(), self.n + 1, "every row must be finished");
        SparseChain {
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

/// Something that maps a row vector `x` to `x P`.
pub trait TransitionOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

impl TransitionOperator for SparseChain {
    fn dim(&self) -> usize {
        self.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, p) in self.row(i) {
                out[j] += xi * p;
            }
        }
    }
}

/// Composition `x ↦ (x A) B` of two operators with matching inner dimension.
pub struct Composed<'a, A: TransitionOperator, B: TransitionOperator> {
    pub first: &'a A,
    pub second: &'a B,
}

impl<A: TransitionOperator, B: TransitionOperator> TransitionOperator for Composed<'_, A, B> {
    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut mid = vec![0.0; self.second.dim()];
        self.first.apply(x, &mut mid);
        self.second.apply(&mid, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target for ‖πP − π‖₁.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 500_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stationary {
    pub pi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Power iteration from `start` (uniform when `None`).
///
/// The caller guarantees aperiodicity of the recurrent class; periodic chains
/// should be solved through an aperiodic power of their kernel.
pub fn stationary<T: TransitionOperator>(
    op: &T,
    start: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<Stationary> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::arg("empty chain"));
    }
    let mut x: Vec<f64> = match start {
        Some(s) => {
            let total: f64 = s.iter().sum();
            s.iter().map(|v| v / total).collect()
        }
        None => vec![1.0 / n as f64; n],
    };
    let mut y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        op.apply(&x, &mut y);
        let total: f64 = y.iter().sum();
        residual = 0.0;
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi /= total;
            residual += (*yi - xi).abs();
        }
        std::mem::swap(&mut x, &mut y);
        if residual <= opts.tol {
            // report the residual of the returned vector itself
            op.apply(&x, &mut y);
            let r: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            return Ok(Stationary {
                pi: x,
                residual: r,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Solves `A x = b` for a sparse square `A` given as `(row, col, value)`
/// triplets (duplicates are summed).
pub fn sparse_solve(n: usize, triplets: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>> {
    use faer::sparse::{SparseColMat, Triplet};
    let entries: Vec<Triplet<usize, usize, f64>> =
        triplets.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
        .map_err(|e| Error::arg(format!("sparse matrix assembly failed: {e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| Error::domain(format!("sparse LU failed: {e:?}")))?;
    let b = faer::col::Col::from_fn(n, |i| rhs[i]);
    let x = faer::linalg::solvers::Solve::solve(&lu, &b);
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("singular linear system"));
    }
    Ok(out)
}

fn residual_l1<T: TransitionOperator>(op: &T, x: &[f64]) -> f64 {
    let mut y = vec![0.0; x.len()];
    op.apply(x, &mut y);
    y.iter().zip(x).map(|(a, b)| (a - b).abs()).sum()
}

/// Stationary distribution by a sparse direct solve with `pi[anchor]` pinned,
/// polished by power steps if the residual misses `opts.tol`.
///
/// `anchor` must be a state with positive stationary mass.
pub fn stationary_direct(chain: &SparseChain, anchor: usize, opts: SolverOptions) -> Result<Stationary> {
    let n = chain.len();
    if n == 0 {
        return Err(Error::arg("empty chain"));
    }
    if anchor >= n {
        return Err(Error::arg("anchor state out of range"));
    }
    if n == 1 {
        return Ok(Stationary {
            pi: vec![1.0],
            residual: 0.0,
            iterations: 0,
        });
    }
    // unknowns: every state except the anchor; equation j is column j of pi (I - P) = 0
    let pos = |i: usize| if i < anchor { i } else { i - 1 };
    let mut trip = Vec::with_capacity(chain.nnz() + n);
    let mut rhs = vec![0.0; n - 1];
    for j in 0..n {
        if j != anchor {
            trip.push((pos(j), pos(j), 1.0));
        }
    }
    for i in 0..n {
        for (j, p) in chain.row(i) {
            if j == anchor {
                continue;
            }
            if i == anchor {
                rhs[pos(j)] += p;
            } else {
                trip.push((pos(j), pos(i), -p));
            }
        }
    }
    let x = sparse_solve(n - 1, &trip, &rhs)?;
    let mut pi = Vec::with_capacity(n);
    for i in 0..n {
        pi.push(if i == anchor { 1.0 } else { x[pos(i)].max(0.0) });
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    let residual = residual_l1(chain, &pi);
    if residual <= opts.tol {
        return Ok(Stationary {
            pi,
            residual,
            iterations: 1,
        });
    }
    stationary(chain, Some(&pi), opts)
}

/// Mean number of steps to enter the complement of `keep`, for every state in
/// `keep` (zero elsewhere). Solves `(I - Q) h = 1` directly.
pub fn mean_exit_times(chain: &SparseChain, keep: &[bool]) -> Result<Vec<f64>> {
    let n = chain.len();
    let mut idx = vec![usize::MAX; n];
    let mut m = 0;
    for i in 0..n {
        if keep[i] {
            idx[i] = m;
            m += 1;
        }
    }
    let mut h = vec![0.0; n];
    if m == 0 {
        return Ok(h);
    }
    let mut trip = Vec::with_capacity(chain.nnz() + m);
    for i in 0..n {
        if !keep[i] {
            continue;
        }
        trip.push((idx[i], idx[i], 1.0));
        for (j, p) in chain.row(i) {
            if keep[j] {
                trip.push((idx[i], idx[j], -p));
            }
        }
    }
    let x = sparse_solve(m, &trip, &vec![1.0; m])
        .map_err(|_| Error::domain("target set is unreachable from some kept state"))?;
    if x.iter().any(|&v| v < 1.0 - 1e-9) {
        return Err(Error::domain("target set is unreachable from some kept state"));
    }
    for i in 0..n {
        if keep[i] {
            h[i] = x[idx[i]];
        }
    }
    Ok(h)
}
