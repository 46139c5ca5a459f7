//! Truncated eigenbases of graph Laplacians.
//!
//! `smallest_eigenpairs` returns the k lowest eigenpairs, which form the
//! functional basis used everywhere downstream. Small problems go through a
//! dense symmetric eigendecomposition; large ones through a shifted
//! block-Lanczos scheme with full reorthogonalization.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::GraphLaplacian;

/// Problems up to this size use the dense eigensolver; larger ones the
/// iterative path. Exposed so callers (and tests) can override.
pub const DENSE_EIGEN_THRESHOLD: usize = 2000;

/// The k lowest eigenpairs of a Laplacian: `vectors` is n×k with orthonormal
/// columns, `values` is ascending. Immutable by convention — nothing in this
/// crate mutates a basis after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// Serialization layout: eigenvalues as the first row, eigenvectors
    /// below, giving an (n+1)×k matrix for the dense matrix container.
    pub fn to_stacked(&self) -> DMatrix<f64> {
        let (n, k) = (self.n(), self.k());
        let mut out = DMatrix::zeros(n + 1, k);
        out.row_mut(0).copy_from(&self.values.transpose());
        out.view_mut((1, 0), (n, k)).copy_from(&self.vectors);
        out
    }

    /// Inverse of [`to_stacked`](Self::to_stacked).
    pub fn from_stacked(stacked: &DMatrix<f64>) -> Result<Self> {
        if stacked.nrows() < 2 {
            return Err(Error::size(
                "stacked basis",
                "at least 2 rows (values + vectors)",
                format!("{} rows", stacked.nrows()),
            ));
        }
        let values = stacked.row(0).transpose();
        if values.iter().zip(values.iter().skip(1)).any(|(a, b)| a > b) {
            return Err(Error::param(
                "stacked basis values",
                values[0],
                "ascending eigenvalue row",
            ));
        }
        let vectors = stacked.rows(1, stacked.nrows() - 1).into_owned();
        Ok(SpectralBasis { vectors, values })
    }
}

/// Diagnostics from [`validate_basis`]; purely informational.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisDiagnostics {
    /// ‖VᵀV − I‖_F.
    pub orthonormality_error: f64,
    /// ‖L·V − V·diag(values)‖_F / max(1, ‖L‖_F).
    pub eigen_residual: f64,
    /// Eigenvalues are non-decreasing.
    pub values_ascending: bool,
}

/// k smallest eigenpairs of `lap`, values ascending, columns orthonormal.
///
/// Deterministic up to sign and up to rotations inside eigenvalue
/// multiplicities; the sign is pinned (largest-magnitude entry positive) but
/// degenerate subspaces are reported in an arbitrary orthonormal frame.
pub fn smallest_eigenpairs(lap: &GraphLaplacian, k: usize) -> Result<SpectralBasis> {
    smallest_eigenpairs_with_threshold(lap, k, DENSE_EIGEN_THRESHOLD)
}

/// As [`smallest_eigenpairs`] with an explicit dense/iterative switch point.
pub fn smallest_eigenpairs_with_threshold(
    lap: &GraphLaplacian,
    k: usize,
    dense_threshold: usize,
) -> Result<SpectralBasis> {
    let n = lap.node_count();
    if k == 0 {
        return Err(Error::param("k", k, "k >= 1"));
    }
    if k > n {
        return Err(Error::size("basis size k", format!("k <= n = {n}"), k.to_string()));
    }
    let mut basis = if n <= dense_threshold {
        dense_smallest(lap.matrix(), k)
    } else {
        lanczos_smallest(lap.matrix(), k)?
    };
    fix_signs(&mut basis.vectors);
    Ok(basis)
}

/// Reports how far `b` is from an exact eigenbasis of `lap`. Never mutates.
pub fn validate_basis(b: &SpectralBasis, lap: &GraphLaplacian) -> Result<BasisDiagnostics> {
    let n = lap.node_count();
    if b.n() != n {
        return Err(Error::size(
            "basis rows",
            format!("{n} (Laplacian size)"),
            b.n().to_string(),
        ));
    }
    if b.vectors.ncols() != b.k() {
        return Err(Error::size(
            "basis columns",
            format!("{} (one per eigenvalue)", b.k()),
            b.vectors.ncols().to_string(),
        ));
    }
    let gram = b.vectors.transpose() * &b.vectors;
    let orthonormality_error = (&gram - DMatrix::identity(b.k(), b.k())).norm();
    let mut residual = lap.matrix() * &b.vectors;
    for (j, mut col) in residual.column_iter_mut().enumerate() {
        col.axpy(-b.values[j], &b.vectors.column(j), 1.0);
    }
    let eigen_residual = residual.norm() / lap.matrix().norm().max(1.0);
    let values_ascending = b
        .values
        .iter()
        .zip(b.values.iter().skip(1))
        .all(|(a, c)| a <= c);
    Ok(BasisDiagnostics {
        orthonormality_error,
        eigen_residual,
        values_ascending,
    })
}

fn dense_smallest(l: &DMatrix<f64>, k: usize) -> SpectralBasis {
    let n = l.nrows();
    let eig = l.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut vectors = DMatrix::zeros(n, k);
    let mut values = DVector::zeros(k);
    for (out_col, &src_col) in order.iter().take(k).enumerate() {
        vectors.column_mut(out_col).copy_from(&eig.eigenvectors.column(src_col));
        values[out_col] = eig.eigenvalues[src_col];
    }
    SpectralBasis { vectors, values }
}

/// Shifted block Krylov scheme: on B = cI − L (PSD for c ≥ λ_max, via the
/// Gershgorin bound) the k smallest eigenpairs of L become the k largest of
/// B. A block of k+8 vectors is expanded by B and re-Rayleigh-Ritzed until
/// the wanted Ritz pairs have certified residuals; the block size exceeds
/// any multiplicity the top-k subspace can contain, so degenerate
/// eigenvalues (e.g. multiple graph components) are captured reliably.
fn lanczos_smallest(l: &DMatrix<f64>, k: usize) -> Result<SpectralBasis> {
    let n = l.nrows();
    let shift = gershgorin_upper(l).max(1.0);
    let tol = shift * (1e-12f64).max(4.0 * n as f64 * f64::EPSILON);
    let block = (k + 8).min(n);
    let max_rounds = 200;

    let mut rng = ChaCha8Rng::seed_from_u64(0x1a9c_705e);
    // Columns of `v` stay orthonormal throughout.
    let mut v = DMatrix::<f64>::zeros(n, 0);
    append_random_block(&mut v, block, &mut rng);
    let mut bv = apply_shifted(l, shift, &v);

    for round in 0..max_rounds {
        // Rayleigh-Ritz on span(v): H = vᵀBv, eigenvectors lift through v.
        let h = v.transpose() * &bv;
        let h = (&h + h.transpose()) * 0.5;
        let eig = h.symmetric_eigen();
        let m = v.ncols();
        let mut order: Vec<usize> = (0..m).collect();
        // Descending in B ⇔ ascending in L.
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap()
                .then(a.cmp(&b))
        });

        let mut ritz_vectors = DMatrix::zeros(n, k);
        let mut values = DVector::zeros(k);
        for (out_col, &src) in order.iter().take(k).enumerate() {
            let y = eig.eigenvectors.column(src);
            ritz_vectors.column_mut(out_col).gemv(1.0, &v, &y, 0.0);
            values[out_col] = shift - eig.eigenvalues[src];
        }

        // Explicit residual certificates ‖L x − λ x‖ for every wanted pair.
        let mut residual = l * &ritz_vectors;
        let mut worst = 0.0f64;
        for (j, mut col) in residual.column_iter_mut().enumerate() {
            col.axpy(-values[j], &ritz_vectors.column(j), 1.0);
            worst = worst.max(col.norm());
        }
        if worst <= tol || m == n {
            return Ok(SpectralBasis {
                vectors: ritz_vectors,
                values,
            });
        }
        let _ = round;

        // Expand the subspace with B times the current best block.
        let mut fresh = apply_shifted(l, shift, &ritz_vectors);
        orthogonalize_against(&mut fresh, &v, &mut rng);
        let grown = v.ncols() + fresh.ncols();
        let mut next = DMatrix::zeros(n, grown);
        next.view_mut((0, 0), (n, v.ncols())).copy_from(&v);
        next.view_mut((0, v.ncols()), (n, fresh.ncols())).copy_from(&fresh);
        v = next;
        bv = apply_shifted(l, shift, &v);
    }
    Err(Error::EigenNoConvergence { iterations: max_rounds })
}

fn apply_shifted(l: &DMatrix<f64>, shift: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x * shift;
    out -= l * x;
    out
}

/// Upper bound on the spectrum: max over rows of diagonal + off-diagonal
/// absolute sum.
fn gershgorin_upper(l: &DMatrix<f64>) -> f64 {
    let n = l.nrows();
    let mut bound = 0.0f64;
    for i in 0..n {
        let mut row = l[(i, i)];
        for j in 0..n {
            if j != i {
                row += l[(i, j)].abs();
            }
        }
        bound = bound.max(row);
    }
    bound
}

/// Orthonormalizes the columns of `block` against `basis` and each other
/// (two Gram-Schmidt passes); columns that vanish are replaced with fresh
/// random directions so the block keeps its width, capped at n total.
fn orthogonalize_against(block: &mut DMatrix<f64>, basis: &DMatrix<f64>, rng: &mut ChaCha8Rng) {
    let n = block.nrows();
    let room = n - basis.ncols();
    if block.ncols() > room {
        *block = block.columns(0, room).into_owned();
    }
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(block.ncols());
    for j in 0..block.ncols() {
        let mut col = block.column(j).into_owned();
        let mut attempts = 0;
        loop {
            for _ in 0..2 {
                let coeffs = basis.transpose() * &col;
                col.gemv(-1.0, basis, &coeffs, 1.0);
                for u in &kept {
                    let d = u.dot(&col);
                    col.axpy(-d, u, 1.0);
                }
            }
            let norm = col.norm();
            if norm > 1e-8 {
                col /= norm;
                kept.push(col);
                break;
            }
            attempts += 1;
            if attempts > 4 {
                break;
            }
            col = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        }
    }
    *block = DMatrix::from_columns(&kept);
}

fn append_random_block(v: &mut DMatrix<f64>, width: usize, rng: &mut ChaCha8Rng) {
    let n = v.nrows();
    let mut block = DMatrix::from_fn(n, width, |_, _| rng.gen_range(-1.0..1.0));
    orthogonalize_against(&mut block, v, rng);
    let grown = v.ncols() + block.ncols();
    let mut next = DMatrix::zeros(n, grown);
    next.view_mut((0, 0), (n, v.ncols())).copy_from(&*v);
    next.view_mut((0, v.ncols()), (n, block.ncols())).copy_from(&block);
    *v = next;
}

/// Pins each column's sign: the entry of largest magnitude (lowest index on
/// ties) is made positive.
fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}
