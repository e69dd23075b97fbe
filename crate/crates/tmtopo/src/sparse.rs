//! Sparse direct linear algebra behind a narrow interface: triplet
//! accumulation and a pivoted LU factor-solve. The saddle-point systems
//! assembled elsewhere are structurally symmetric but numerically
//! unsymmetric, indefinite, and carry zero diagonal blocks, so a pivoting
//! LU is the appropriate factorization.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::SymbolicLu;
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat, Triplet};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum LinearError {
    #[error("matrix is {nrows}x{ncols}, expected square")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("right-hand side length {rhs} does not match matrix dimension {n}")]
    ShapeMismatch { n: usize, rhs: usize },
    #[error("structurally singular matrix: row or column {0} has no entries")]
    StructurallySingular(usize),
    #[error("singular matrix encountered during factorization")]
    Singular,
    #[error("sparse factorization failed internally")]
    Internal,
}

/// Square sparse matrix in triplet form. Duplicate entries are summed when
/// the matrix is compressed. The entry buffer is meant to be reused across
/// Newton iterations: the assembly loops push entries in a fixed order, so
/// the pattern is rebuilt identically while only values change.
#[derive(Debug, Clone)]
pub struct TripletMatrix {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops all values but keeps the allocation for the next assembly pass.
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push(Triplet::new(row, col, value));
    }

    /// The matrix with rows and columns swapped.
    pub fn transposed(&self) -> TripletMatrix {
        TripletMatrix {
            n: self.n,
            entries: self
                .entries
                .iter()
                .map(|t| Triplet::new(t.col, t.row, t.val))
                .collect(),
        }
    }

    /// y = A x with duplicates summed; used by tests and residual checks.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for t in &self.entries {
            y[t.row] += t.val * x[t.col];
        }
        y
    }

    fn check_structure(&self) -> Result<(), LinearError> {
        let mut row_seen = vec![false; self.n];
        let mut col_seen = vec![false; self.n];
        for t in &self.entries {
            row_seen[t.row] = true;
            col_seen[t.col] = true;
        }
        for i in 0..self.n {
            if !row_seen[i] || !col_seen[i] {
                return Err(LinearError::StructurallySingular(i));
            }
        }
        Ok(())
    }
}

/// A pivoted sparse LU, reusable across right-hand sides. Holding on to one
/// lets an iteration pay the factorization cost only when the matrix has
/// actually changed enough to matter.
pub struct Factorization {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl Factorization {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinearError> {
        if rhs.len() != self.n {
            return Err(LinearError::ShapeMismatch {
                n: self.n,
                rhs: rhs.len(),
            });
        }
        let b = faer::Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        // A numerically singular factorization surfaces as non-finite
        // entries rather than an error code; reject it here.
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(LinearError::Singular)
        }
    }
}

/// Factors the matrix with a pivoted sparse LU.
pub fn factor(matrix: &TripletMatrix) -> Result<Factorization, LinearError> {
    let n = matrix.n;
    matrix.check_structure()?;
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &matrix.entries)
        .map_err(|_| LinearError::Internal)?;
    // The factorization panics outright on an exactly zero pivot instead of
    // reporting it; treat that the same as any other singular matrix so
    // callers can back off and retry with a smaller step.
    let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| mat.sp_lu()))
        .map_err(|_| LinearError::Singular)?
        .map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { .. } => LinearError::Singular,
            _ => LinearError::Internal,
        })?;
    Ok(Factorization { n, lu })
}

/// Reusable analysis of a fixed sparsity pattern: the compressed column
/// structure, the triplet-to-slot ordering, and the symbolic LU (fill
/// reducing ordering plus elimination structure). Assembly loops push the
/// same entry pattern every pass with fresh values, so all of this survives
/// across iterations and only the numeric factorization is repeated.
pub struct PatternCache {
    n: usize,
    nnz: usize,
    structure: SymbolicSparseColMat<usize>,
    order: Argsort<usize>,
    symbolic: SymbolicLu<usize>,
}

/// Analyzes the pattern of `matrix` for repeated factorizations via
/// [`PatternCache::factor`].
pub fn analyze(matrix: &TripletMatrix) -> Result<PatternCache, LinearError> {
    let n = matrix.n;
    matrix.check_structure()?;
    let pairs: Vec<Pair<usize, usize>> = matrix
        .entries
        .iter()
        .map(|t| Pair::new(t.row, t.col))
        .collect();
    let (structure, order) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
        .map_err(|_| LinearError::Internal)?;
    let symbolic = SymbolicLu::try_new(structure.as_ref()).map_err(|_| LinearError::Internal)?;
    Ok(PatternCache {
        n,
        nnz: matrix.entries.len(),
        structure,
        order,
        symbolic,
    })
}

impl PatternCache {
    /// Numeric refactorization of a matrix sharing the analyzed pattern.
    /// Falls back to a from-scratch factorization if pinning the pivot
    /// order makes the refactorization fail on values it would otherwise
    /// have handled.
    pub fn factor(&self, matrix: &TripletMatrix) -> Result<Factorization, LinearError> {
        if matrix.n != self.n || matrix.entries.len() != self.nnz {
            return factor(matrix);
        }
        let vals: Vec<f64> = matrix.entries.iter().map(|t| t.val).collect();
        let mat = SparseColMat::new_from_argsort(self.structure.clone(), &self.order, &vals)
            .map_err(|_| LinearError::Internal)?;
        let refactored = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            faer::sparse::linalg::solvers::Lu::try_new_with_symbolic(
                self.symbolic.clone(),
                mat.as_ref(),
            )
        }));
        match refactored {
            Ok(Ok(lu)) => Ok(Factorization { n: self.n, lu }),
            _ => factor(matrix),
        }
    }
}

/// Factors the matrix and solves `A x = rhs` in one call.
pub fn factor_solve(matrix: &TripletMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinearError> {
    if rhs.len() != matrix.n {
        return Err(LinearError::ShapeMismatch {
            n: matrix.n,
            rhs: rhs.len(),
        });
    }
    factor(matrix)?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let mut m = TripletMatrix::new(3);
        for i in 0..3 {
            m.push(i, i, 1.0);
        }
        let x = factor_solve(&m, &[3.0, -1.0, 0.5]).unwrap();
        assert_eq!(x, vec![3.0, -1.0, 0.5]);
    }

    #[test]
    fn saddle_block_with_zero_diagonal() {
        // [[2, 1], [1, 0]] x = (3, 1) has the exact solution (1, 1).
        let mut m = TripletMatrix::new(2);
        m.push(0, 0, 2.0);
        m.push(0, 1, 1.0);
        m.push(1, 0, 1.0);
        let x = factor_solve(&m, &[3.0, 1.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn anti_diagonal_requires_pivoting() {
        let n = 40;
        let mut m = TripletMatrix::new(n);
        for i in 0..n {
            m.push(i, n - 1 - i, 1.0 + i as f64);
        }
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 - 3.5).collect();
        let x = factor_solve(&m, &rhs).unwrap();
        for i in 0..n {
            assert!((x[n - 1 - i] - rhs[i] / (1.0 + i as f64)).abs() < 1e-13);
        }
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let mut m = TripletMatrix::new(1);
        m.push(0, 0, 1.5);
        m.push(0, 0, 0.5);
        let x = factor_solve(&m, &[4.0]).unwrap();
        assert_eq!(x[0], 2.0);
    }

    #[test]
    fn large_indefinite_system_recovers_small_residual() {
        // 1D Laplacian with an appended average-value constraint row/column:
        // same saddle structure as the equilibrium systems.
        let n = 1000;
        let mut m = TripletMatrix::new(n);
        for i in 0..n - 1 {
            m.push(i, i, 2.0);
            if i > 0 {
                m.push(i, i - 1, -1.0);
            }
            if i + 1 < n - 1 {
                m.push(i, i + 1, -1.0);
            }
            m.push(i, n - 1, 1.0 / (n - 1) as f64);
            m.push(n - 1, i, 1.0 / (n - 1) as f64);
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = factor_solve(&m, &rhs).unwrap();
        let r = m.matvec(&x);
        let num: f64 = r
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num / den < 1e-10, "relative residual {}", num / den);
    }

    #[test]
    fn empty_row_is_reported_not_crashed() {
        let mut m = TripletMatrix::new(3);
        m.push(0, 0, 1.0);
        m.push(2, 2, 1.0);
        m.push(0, 1, 1.0); // column 1 covered, row 1 empty
        match factor_solve(&m, &[1.0, 1.0, 1.0]) {
            Err(LinearError::StructurallySingular(1)) => {}
            other => panic!("expected structural singularity, got {:?}", other),
        }
    }

    #[test]
    fn cached_pattern_matches_fresh_factorization() {
        // Same pattern twice with different values, duplicates included;
        // the cached numeric path must agree with the from-scratch one.
        let build = |scale: f64| {
            let mut m = TripletMatrix::new(3);
            m.push(0, 0, 2.0 * scale);
            m.push(0, 0, 1.0); // duplicate, summed
            m.push(0, 1, -1.0);
            m.push(1, 0, -1.0 * scale);
            m.push(1, 1, 3.0);
            m.push(1, 2, 0.5);
            m.push(2, 1, 0.5 * scale);
            m.push(2, 2, 1.0);
            m
        };
        let rhs = [1.0, -2.0, 0.25];
        let cache = analyze(&build(1.0)).unwrap();
        for scale in [1.0, -3.0, 0.01] {
            let m = build(scale);
            let cached = cache.factor(&m).unwrap().solve(&rhs).unwrap();
            let fresh = factor_solve(&m, &rhs).unwrap();
            for (a, b) in cached.iter().zip(&fresh) {
                assert!((a - b).abs() < 1e-13, "{a} vs {b} at scale {scale}");
            }
            let r = m.matvec(&cached);
            for (a, b) in r.iter().zip(&rhs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // A differently-shaped matrix routes through the fallback.
        let mut other = TripletMatrix::new(2);
        other.push(0, 0, 1.0);
        other.push(1, 1, 2.0);
        let x = cache.factor(&other).unwrap().solve(&[2.0, 2.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn numerically_singular_matrix_is_an_error() {
        let mut m = TripletMatrix::new(2);
        m.push(0, 0, 1.0);
        m.push(0, 1, 1.0);
        m.push(1, 0, 1.0);
        m.push(1, 1, 1.0);
        assert!(factor_solve(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn shape_errors() {
        let m = TripletMatrix::new(2);
        assert!(matches!(
            factor_solve(&m, &[1.0]),
            Err(LinearError::ShapeMismatch { .. })
        ));
    }
}
