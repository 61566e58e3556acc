//! Sparse symmetric positive-definite factorization.
//!
//! The random-effect system of a crossed logistic mixed model is large but
//! very sparse: a person column touches only the items that person answered.
//! This module provides a fill-reducing ordering, a symbolic analysis that is
//! computed once per model, and a numeric `L L'` factorization that is
//! recomputed every time the weights change.

mod cholesky;
mod ordering;

pub use cholesky::{CholeskyError, NumericCholesky, SymbolicCholesky};
pub use ordering::{minimum_degree, Permutation};

/// Lower-triangle sparsity pattern of a symmetric matrix given as a list of
/// off-diagonal `(row, col)` pairs. The diagonal is always structurally present.
#[derive(Debug, Clone)]
pub struct SymmetricPattern {
    n: usize,
    /// Adjacency lists, sorted and deduplicated, without self loops.
    adjacency: Vec<Vec<usize>>,
}

impl SymmetricPattern {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            assert!(a < n && b < n, "edge ({a}, {b}) out of range for n = {n}");
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { n, adjacency }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Number of stored entries in the lower triangle including the diagonal.
    pub fn nnz_lower(&self) -> usize {
        self.n + self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}
