//! K-nearest-neighbor similarity graphs and graph Laplacians.
//!
//! Graphs are undirected with nonnegative weights and no self-loops. The
//! Laplacian is the unnormalized `L = D - W`; normalized variants are out of
//! scope here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric nonnegative adjacency over `n` nodes, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    adjacency: DMatrix<f64>,
}

impl WeightedGraph {
    /// Validates and wraps an adjacency matrix.
    ///
    /// Requires a square matrix with exact symmetry, zero diagonal and
    /// finite nonnegative weights.
    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self> {
        let (r, c) = adjacency.shape();
        if r != c {
            return Err(Error::size("adjacency matrix", "square", format!("{r}x{c}")));
        }
        for i in 0..r {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::param("adjacency", adjacency[(i, i)], "zero diagonal"));
            }
            for j in 0..i {
                let w = adjacency[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::param("adjacency", w, "finite nonnegative weights"));
                }
                if w != adjacency[(j, i)] {
                    return Err(Error::param("adjacency", w, "exact symmetry"));
                }
            }
        }
        Ok(WeightedGraph { n: r, adjacency })
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        WeightedGraph {
            n,
            adjacency: DMatrix::zeros(n, n),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    /// Weighted degree of each node (row sums of the adjacency).
    pub fn degrees(&self) -> DVector<f64> {
        DVector::from_iterator(self.n, self.adjacency.row_iter().map(|r| r.sum()))
    }

    /// Undirected edges as `(i, j, weight)` with `i < j` and `weight > 0`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..self.n {
            for i in 0..j {
                let w = self.adjacency[(i, j)];
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }
}

/// Unnormalized Laplacian `L = D - W` together with the degree vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    matrix: DMatrix<f64>,
    degree: DVector<f64>,
}

impl GraphLaplacian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn degree(&self) -> &DVector<f64> {
        &self.degree
    }

    pub fn node_count(&self) -> usize {
        self.degree.len()
    }
}

/// Builds `L = diag(rowsum(W)) - W`. Row sums of the result are zero by
/// construction.
pub fn laplacian(graph: &WeightedGraph) -> GraphLaplacian {
    let n = graph.node_count();
    let degree = graph.degrees();
    let mut matrix = -graph.adjacency().clone();
    for i in 0..n {
        matrix[(i, i)] = degree[i];
    }
    GraphLaplacian { matrix, degree }
}

/// Bandwidth policy for the Gaussian edge kernel `exp(-d^2 / sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelScale {
    /// `sigma` = mean over all nodes of the distance to the K-th nearest
    /// neighbor. One global scalar, deterministic.
    Auto,
    /// User-supplied `sigma > 0`.
    Fixed(f64),
}

/// K-nearest-neighbor graph over the rows of `data`.
///
/// Node `i` and `j` are connected iff `j` is among the `K` nearest neighbors
/// of `i` by Euclidean distance or vice versa (union rule). The shared weight
/// is the Gaussian kernel of their distance, which is symmetric, so the
/// union keeps `max(w_ij, w_ji)` trivially. Duplicate points get weight 1.
pub fn knn_graph(data: &DMatrix<f64>, k: usize, kernel_scale: KernelScale) -> Result<WeightedGraph> {
    let n = data.nrows();
    if k == 0 {
        return Err(Error::param("K", k, "K >= 1"));
    }
    if n < k + 1 {
        return Err(Error::TooFewSamples { needed: k + 1, got: n });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "knn_graph data".into(),
        });
    }
    if let KernelScale::Fixed(s) = kernel_scale {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::param("sigma", s, "sigma > 0"));
        }
    }

    let sq_dist = pairwise_squared_distances(data);

    // For each node, the K nearest others by (distance, index).
    let mut neighbor_lists: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut kth_distance_sum = 0.0;
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            sq_dist[(i, a)]
                .partial_cmp(&sq_dist[(i, b)])
                .unwrap()
                .then(a.cmp(&b))
        });
        order.truncate(k);
        kth_distance_sum += sq_dist[(i, order[k - 1])].sqrt();
        neighbor_lists.push(order);
    }

    let sigma = match kernel_scale {
        KernelScale::Fixed(s) => s,
        KernelScale::Auto => kth_distance_sum / n as f64,
    };
    // All-duplicate data has kth distance 0; any positive sigma gives the
    // correct weight exp(0) = 1 there.
    let sigma = if sigma > 0.0 { sigma } else { 1.0 };
    let inv_sigma_sq = 1.0 / (sigma * sigma);

    let mut adjacency: DMatrix<f64> = DMatrix::zeros(n, n);
    for (i, neighbors) in neighbor_lists.iter().enumerate() {
        for &j in neighbors {
            let w = (-sq_dist[(i, j)] * inv_sigma_sq).exp();
            // Union of directed KNN relations; weight is symmetric in the
            // distance so max() equals the kernel value.
            adjacency[(i, j)] = adjacency[(i, j)].max(w);
            adjacency[(j, i)] = adjacency[(i, j)];
        }
    }
    WeightedGraph::from_adjacency(adjacency)
}

/// Default neighbor count for KNN graph construction.
pub const DEFAULT_KNN: usize = 10;

fn pairwise_squared_distances(data: &DMatrix<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let gram = data * data.transpose();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)];
            // Rounding can push tiny distances negative.
            out[(i, j)] = d.max(0.0);
        }
    }
    out
}

/// Centers each feature column to mean 0 and scales it to standard
/// deviation 1 (population convention, divisor `n`). Constant columns map
/// to all-zeros, which makes the transform idempotent.
pub fn standardize_features(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "standardize_features data".into(),
        });
    }
    let n = data.nrows() as f64;
    let mut out = data.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 0.0 {
            col /= std;
        } else {
            col.fill(0.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn collinear_points_k1() {
        // Points {0, 1, 10} on a line: 1's nearest is 0, 0's nearest is 1,
        // 10's nearest is 1. Union edges: (0,1) and (1,2); never (0,2).
        let data = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 10.0]);
        let g = knn_graph(&data, 1, KernelScale::Fixed(1.0)).unwrap();
        let a = g.adjacency();
        assert!((a[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((a[(1, 2)] - (-81.0f64).exp()).abs() < 1e-15);
        assert_eq!(a[(0, 2)], 0.0);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn duplicate_points_weight_one() {
        let data = DMatrix::from_column_slice(2, 1, &[3.5, 3.5]);
        let g = knn_graph(&data, 1, KernelScale::Fixed(1.0)).unwrap();
        assert_eq!(g.adjacency()[(0, 1)], 1.0);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn all_duplicates_auto_sigma() {
        let data = DMatrix::from_element(4, 2, 7.0);
        let g = knn_graph(&data, 2, KernelScale::Auto).unwrap();
        for (_, _, w) in g.edges() {
            assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn k10_guarantees_degree_at_least_10() {
        let data = random_data(40, 3, 1);
        let g = knn_graph(&data, 10, KernelScale::Auto).unwrap();
        for i in 0..40 {
            let deg = (0..40).filter(|&j| g.adjacency()[(i, j)] > 0.0).count();
            assert!(deg >= 10, "node {i} has degree {deg}");
        }
    }

    #[test]
    fn knn_output_is_exactly_symmetric() {
        for seed in 0..5 {
            let data = random_data(25, 4, seed);
            let g = knn_graph(&data, 5, KernelScale::Auto).unwrap();
            let a = g.adjacency();
            for i in 0..25 {
                for j in 0..25 {
                    assert_eq!(a[(i, j)], a[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn kernel_weight_monotone_in_distance() {
        // Fixed sigma: a farther pair never gets a larger weight.
        let data = random_data(30, 2, 7);
        let g = knn_graph(&data, 6, KernelScale::Fixed(0.8)).unwrap();
        let d = pairwise_squared_distances(&data);
        let mut edges: Vec<(f64, f64)> = g
            .edges()
            .into_iter()
            .map(|(i, j, w)| (d[(i, j)], w))
            .collect();
        edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for pair in edges.windows(2) {
            assert!(pair[1].1 <= pair[0].1 + 1e-15);
        }
    }

    #[test]
    fn auto_sigma_is_mean_kth_neighbor_distance() {
        // 1-D points {0, 1, 3}: K = 1 distances are 1, 1, 2 -> sigma = 4/3.
        let data = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        let g = knn_graph(&data, 1, KernelScale::Auto).unwrap();
        let sigma: f64 = 4.0 / 3.0;
        let expect = (-1.0 / (sigma * sigma)).exp();
        assert!((g.adjacency()[(0, 1)] - expect).abs() < 1e-15);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let data = random_data(5, 2, 0);
        match knn_graph(&data, 5, KernelScale::Auto) {
            Err(Error::TooFewSamples { needed: 6, got: 5 }) => {}
            other => panic!("expected TooFewSamples, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_data_is_an_error() {
        let mut data = random_data(5, 2, 0);
        data[(2, 1)] = f64::NAN;
        assert!(matches!(
            knn_graph(&data, 2, KernelScale::Auto),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn two_node_laplacian() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        let lap = laplacian(&WeightedGraph::from_adjacency(a).unwrap());
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(lap.matrix(), &expect);
    }

    #[test]
    fn path3_laplacian_eigenvalues() {
        // Unit path 0-1-2: characteristic polynomial gives {0, 1, 3}.
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        a[(1, 2)] = 1.0;
        a[(2, 1)] = 1.0;
        let lap = laplacian(&WeightedGraph::from_adjacency(a).unwrap());
        let mut eigs: Vec<f64> = lap
            .matrix()
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (got, want) in eigs.iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{eigs:?}");
        }
    }

    #[test]
    fn empty_graph_laplacian_is_zero() {
        let lap = laplacian(&WeightedGraph::empty(4));
        assert!(lap.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let n = rng.gen_range(2..=50);
            let mut a = DMatrix::zeros(n, n);
            for j in 0..n {
                for i in 0..j {
                    if rng.gen_bool(0.3) {
                        let w = rng.gen_range(0.0..2.0);
                        a[(i, j)] = w;
                        a[(j, i)] = w;
                    }
                }
            }
            let lap = laplacian(&WeightedGraph::from_adjacency(a).unwrap());
            let scale = lap.matrix().amax().max(1.0);
            for i in 0..n {
                assert!(lap.matrix().row(i).sum().abs() <= 1e-10 * scale);
            }
            let min_eig = lap
                .matrix()
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .min();
            assert!(min_eig >= -1e-10 * scale, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn standardize_two_point_column() {
        let data = DMatrix::from_column_slice(2, 1, &[1.0, 3.0]);
        let s = standardize_features(&data).unwrap();
        assert!((s[(0, 0)] + 1.0).abs() < 1e-15);
        assert!((s[(1, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standardize_constant_column_to_zeros() {
        let data = DMatrix::from_element(3, 1, 5.0);
        let s = standardize_features(&data).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_is_idempotent() {
        let data = random_data(20, 5, 3);
        let once = standardize_features(&data).unwrap();
        let twice = standardize_features(&once).unwrap();
        assert!((&once - &twice).amax() < 1e-12);
    }

    #[test]
    fn standardize_rejects_non_finite() {
        let mut data = random_data(4, 2, 0);
        data[(0, 0)] = f64::INFINITY;
        assert!(matches!(
            standardize_features(&data),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn adjacency_validation_rejects_asymmetry() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = 1.0;
        assert!(WeightedGraph::from_adjacency(a).is_err());
    }
}
