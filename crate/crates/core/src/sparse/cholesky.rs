use thiserror::Error;

use super::{Permutation, SymmetricPattern};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CholeskyError {
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("expected {expected} values, got {got}")]
    ValueLength { expected: usize, got: usize },
}

/// Symbolic analysis of `P A P'`: elimination tree, the pattern of `L`, and
/// the per-row patterns used by the up-looking numeric phase.
///
/// Input values are supplied column by column for the upper triangle of the
/// permuted matrix (`cp`/`ci`), which equals the lower triangle read by rows.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Permutation,
    cp: Vec<usize>,
    ci: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    row_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyze(pattern: &SymmetricPattern, perm: Permutation) -> Self {
        let n = pattern.dim();
        assert_eq!(perm.len(), n, "permutation length must match the matrix");

        // Upper triangle of C = P A P', column k holds rows i <= k.
        let mut cp = Vec::with_capacity(n + 1);
        let mut ci = Vec::with_capacity(pattern.nnz_lower());
        cp.push(0);
        for k in 0..n {
            let start = ci.len();
            ci.push(k);
            for &old in pattern.neighbors(perm.old(k)) {
                let i = perm.new_index(old);
                if i < k {
                    ci.push(i);
                }
            }
            ci[start..].sort_unstable();
            cp.push(ci.len());
        }

        let parent = etree(n, &cp, &ci);

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut counts = vec![1usize; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack = Vec::new();
        let mut reach = Vec::new();
        row_ptr.push(0);
        for k in 0..n {
            ereach(k, &cp, &ci, &parent, &mut mark, &mut stack, &mut reach);
            for &i in &reach {
                counts[i] += 1;
            }
            row_idx.extend_from_slice(&reach);
            row_ptr.push(row_idx.len());
        }

        let mut lp = Vec::with_capacity(n + 1);
        lp.push(0);
        for &c in &counts {
            lp.push(lp.last().unwrap() + c);
        }
        let mut li = vec![0usize; lp[n]];
        let mut fill: Vec<usize> = lp[..n].to_vec();
        for k in 0..n {
            for &i in &row_idx[row_ptr[k]..row_ptr[k + 1]] {
                li[fill[i]] = k;
                fill[i] += 1;
            }
            li[fill[k]] = k;
            fill[k] += 1;
        }
        // Column k receives its diagonal while row k is processed, before any
        // later row, so every column starts with its diagonal.
        debug_assert!((0..n).all(|k| n == 0 || li[lp[k]] == k));

        Self { n, perm, cp, ci, lp, li, row_ptr, row_idx }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    /// Number of input values expected by [`NumericCholesky::factor`].
    pub fn input_len(&self) -> usize {
        self.ci.len()
    }

    pub fn nnz_factor(&self) -> usize {
        self.li.len()
    }

    /// Index into the input value array for the symmetric entry `(a, b)`
    /// given in original (unpermuted) indices. `None` when the entry is not
    /// part of the pattern.
    pub fn position(&self, a: usize, b: usize) -> Option<usize> {
        let (x, y) = (self.perm.new_index(a), self.perm.new_index(b));
        let (row, col) = if x <= y { (x, y) } else { (y, x) };
        let slice = &self.ci[self.cp[col]..self.cp[col + 1]];
        slice.binary_search(&row).ok().map(|off| self.cp[col] + off)
    }
}

fn etree(n: usize, cp: &[usize], ci: &[usize]) -> Vec<usize> {
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for &row in &ci[cp[k]..cp[k + 1]] {
            let mut i = row;
            while i != usize::MAX && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == usize::MAX {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Pattern of row `k` of `L` (excluding the diagonal) in topological order.
fn ereach(
    k: usize,
    cp: &[usize],
    ci: &[usize],
    parent: &[usize],
    mark: &mut [usize],
    stack: &mut Vec<usize>,
    out: &mut Vec<usize>,
) {
    out.clear();
    mark[k] = k;
    for &row in &ci[cp[k]..cp[k + 1]] {
        let mut i = row;
        if i >= k {
            continue;
        }
        stack.clear();
        while mark[i] != k {
            stack.push(i);
            mark[i] = k;
            i = parent[i];
        }
        while let Some(j) = stack.pop() {
            out.push(j);
        }
    }
    // `out` now holds path segments, each in root-to-leaf order, appended in
    // discovery order; reversing gives a valid topological order overall.
    out.reverse();
}

/// Numeric factor `L` with `L L' = P A P'`.
#[derive(Debug, Clone)]
pub struct NumericCholesky {
    lx: Vec<f64>,
    work: Vec<f64>,
    fill: Vec<usize>,
}

impl NumericCholesky {
    pub fn new(symbolic: &SymbolicCholesky) -> Self {
        Self {
            lx: vec![0.0; symbolic.nnz_factor()],
            work: vec![0.0; symbolic.n],
            fill: vec![0; symbolic.n],
        }
    }

    /// Factor the matrix whose upper-triangle values (permuted layout) are
    /// `values`. Reuses the storage of `self`.
    pub fn factor(&mut self, sym: &SymbolicCholesky, values: &[f64]) -> Result<(), CholeskyError> {
        if values.len() != sym.input_len() {
            return Err(CholeskyError::ValueLength { expected: sym.input_len(), got: values.len() });
        }
        let n = sym.n;
        let (lp, li) = (&sym.lp, &sym.li);
        let x = &mut self.work;
        let lx = &mut self.lx;
        let fill = &mut self.fill;
        fill.copy_from_slice(&lp[..n]);
        for k in 0..n {
            for p in sym.cp[k]..sym.cp[k + 1] {
                x[sym.ci[p]] = values[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &sym.row_idx[sym.row_ptr[k]..sym.row_ptr[k + 1]] {
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in lp[i] + 1..fill[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                lx[fill[i]] = lki;
                fill[i] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                // Leave the work vector clean for the next call.
                x.iter_mut().for_each(|v| *v = 0.0);
                return Err(CholeskyError::NotPositiveDefinite { pivot: k, value: d });
            }
            lx[fill[k]] = d.sqrt();
            fill[k] += 1;
        }
        Ok(())
    }

    /// `log det(A) = 2 Σ log L_kk`.
    pub fn log_det(&self, sym: &SymbolicCholesky) -> f64 {
        2.0 * (0..sym.n).map(|k| self.lx[sym.lp[k]].ln()).sum::<f64>()
    }

    /// In-place `L y = b` on a vector already in permuted order.
    pub fn forward(&self, sym: &SymbolicCholesky, y: &mut [f64]) {
        for j in 0..sym.n {
            let start = sym.lp[j];
            let yj = y[j] / self.lx[start];
            y[j] = yj;
            if yj != 0.0 {
                for p in start + 1..sym.lp[j + 1] {
                    y[sym.li[p]] -= self.lx[p] * yj;
                }
            }
        }
    }

    /// In-place `L' x = y` on a vector in permuted order.
    pub fn backward(&self, sym: &SymbolicCholesky, x: &mut [f64]) {
        for j in (0..sym.n).rev() {
            let start = sym.lp[j];
            let mut acc = x[j];
            for p in start + 1..sym.lp[j + 1] {
                acc -= self.lx[p] * x[sym.li[p]];
            }
            x[j] = acc / self.lx[start];
        }
    }

    /// Solve `A x = b` with `b` and the result in original ordering.
    pub fn solve(&self, sym: &SymbolicCholesky, b: &[f64]) -> Vec<f64> {
        let perm = &sym.perm;
        let mut y: Vec<f64> = (0..sym.n).map(|k| b[perm.old(k)]).collect();
        self.forward(sym, &mut y);
        self.backward(sym, &mut y);
        let mut x = vec![0.0; sym.n];
        for k in 0..sym.n {
            x[perm.old(k)] = y[k];
        }
        x
    }

    /// Diagonal of `L` in pivot order.
    pub fn diagonal(&self, sym: &SymbolicCholesky) -> Vec<f64> {
        (0..sym.n).map(|k| self.lx[sym.lp[k]]).collect()
    }
}
