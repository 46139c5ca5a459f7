//! Evaluation metrics: masked RMSE, k-means clustering with purity, and KNN
//! classification.

use nalgebra::DMatrix;
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Root mean squared error over the support of `s`:
/// sqrt(‖(X−M)⊙S‖_F² / ΣS). Entries outside the mask never contribute.
pub fn rmse_masked(x: &DMatrix<f64>, m: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != m.shape() || x.shape() != s.shape() {
        return Err(Error::size(
            "rmse_masked operands",
            format!("{}x{}", x.nrows(), x.ncols()),
            format!("{}x{} / {}x{}", m.nrows(), m.ncols(), s.nrows(), s.ncols()),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0u64;
    for ((xi, mi), si) in x.iter().zip(m.iter()).zip(s.iter()) {
        if *si != 0.0 {
            if *si != 1.0 {
                return Err(Error::param("mask entry", *si, "mask entries in {0,1}"));
            }
            let d = xi - mi;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptySupport);
    }
    Ok((sum / count as f64).sqrt())
}

/// One clustering of n points: `assignments[i]` is the cluster id of point
/// i, `inertia` the within-cluster sum of squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

/// Best-of-restarts k-means outcome; the individual restarts are kept so
/// callers can compute per-restart purity.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansRun {
    pub best: ClusteringResult,
    pub restarts: Vec<ClusteringResult>,
}

/// Lloyd's algorithm with k-means++ seeding. Each restart draws from an
/// independent seeded stream; the best-inertia restart wins. Stops a
/// restart when assignments repeat or after 300 iterations.
pub fn kmeans(
    data: &DMatrix<f64>,
    k_clusters: usize,
    n_restarts: usize,
    seed: u64,
) -> Result<KmeansRun> {
    let n = data.nrows();
    if k_clusters == 0 {
        return Err(Error::param("k_clusters", k_clusters, "k_clusters >= 1"));
    }
    if k_clusters > n {
        return Err(Error::TooFewSamples {
            needed: k_clusters,
            got: n,
        });
    }
    if n_restarts == 0 {
        return Err(Error::param("n_restarts", n_restarts, "n_restarts >= 1"));
    }
    let mut restarts = Vec::with_capacity(n_restarts);
    for r in 0..n_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        restarts.push(lloyd(data, k_clusters, &mut rng));
    }
    let best = restarts
        .iter()
        .min_by(|a, b| a.inertia.partial_cmp(&b.inertia).unwrap())
        .unwrap()
        .clone();
    Ok(KmeansRun { best, restarts })
}

fn lloyd(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> ClusteringResult {
    let n = data.nrows();
    let mut centers = plus_plus_seeding(data, k, rng);
    // Sentinel forces at least one update step even if the first real
    // assignment happens to be all-zeros.
    let mut assignments = vec![usize::MAX; n];
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..300 {
        // Assignment step: nearest center, ties to the lowest index.
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (best, d) = nearest_center(&data.row(i).into_owned(), &centers);
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            inertia += d;
        }
        debug_assert!(
            inertia <= prev_inertia + 1e-9 * (1.0 + prev_inertia.abs()),
            "Lloyd iteration increased inertia: {prev_inertia} -> {inertia}"
        );
        prev_inertia = inertia;
        if !changed {
            break;
        }
        // Update step: centroid of each cluster; an empty cluster takes the
        // point currently farthest from its center.
        let mut counts = vec![0usize; k];
        let mut sums = DMatrix::zeros(k, data.ncols());
        for i in 0..n {
            counts[assignments[i]] += 1;
            let mut row = sums.row_mut(assignments[i]);
            row += data.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centers.row_mut(c);
                row.copy_from(&(sums.row(c) / counts[c] as f64));
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = (data.row(a) - centers.row(assignments[a])).norm_squared();
                        let db = (data.row(b) - centers.row(assignments[b])).norm_squared();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                let mut row = centers.row_mut(c);
                row.copy_from(&data.row(far));
            }
        }
    }
    // Final consistent pass so inertia matches the returned assignments.
    let mut inertia = 0.0;
    for i in 0..n {
        let (best, d) = nearest_center(&data.row(i).into_owned(), &centers);
        assignments[i] = best;
        inertia += d;
    }
    ClusteringResult { assignments, inertia }
}

fn nearest_center(
    point: &nalgebra::RowDVector<f64>,
    centers: &DMatrix<f64>,
) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.row_iter().enumerate() {
        let d = (point - center).norm_squared();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn plus_plus_seeding(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = data.nrows();
    let mut centers = DMatrix::zeros(k, data.ncols());
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from(&data.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| (data.row(i) - centers.row(0)).norm_squared())
        .collect();
    for c in 1..k {
        let next = if d2.iter().sum::<f64>() > 0.0 {
            WeightedIndex::new(&d2).unwrap().sample(rng)
        } else {
            // All remaining points coincide with chosen centers.
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from(&data.row(next));
        for i in 0..n {
            let d = (data.row(i) - centers.row(c)).norm_squared();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

/// Fraction of points whose cluster's majority class matches their own
/// label: Σ over clusters of the most frequent class count, divided by n.
pub fn clustering_purity(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::size(
            "purity inputs",
            assignments.len().to_string(),
            labels.len().to_string(),
        ));
    }
    if assignments.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut per_cluster: std::collections::HashMap<usize, std::collections::HashMap<usize, usize>> =
        std::collections::HashMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *per_cluster.entry(a).or_default().entry(l).or_default() += 1;
    }
    let correct: usize = per_cluster
        .values()
        .map(|counts| counts.values().copied().max().unwrap_or(0))
        .sum();
    Ok(correct as f64 / assignments.len() as f64)
}

/// Max and mean purity across k-means restarts. The reported protocol value
/// is the maximum; the mean is kept alongside because "best of 10 runs" and
/// "typical run" answer different questions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuritySummary {
    pub max: f64,
    pub mean: f64,
}

/// Runs k-means with 10 restarts and summarizes purity against the labels.
pub fn purity_protocol(
    representation: &DMatrix<f64>,
    labels: &[usize],
    k_clusters: usize,
    seed: u64,
) -> Result<PuritySummary> {
    if representation.nrows() != labels.len() {
        return Err(Error::size(
            "labels",
            representation.nrows().to_string(),
            labels.len().to_string(),
        ));
    }
    let run = kmeans(representation, k_clusters, 10, seed)?;
    let purities: Vec<f64> = run
        .restarts
        .iter()
        .map(|r| clustering_purity(&r.assignments, labels))
        .collect::<Result<_>>()?;
    let max = purities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = purities.iter().sum::<f64>() / purities.len() as f64;
    Ok(PuritySummary { max, mean })
}

/// K-nearest-neighbor prediction: majority vote among the K nearest
/// training rows (Euclidean); vote ties go to the class with the smallest
/// summed distance, then to the lowest label.
pub fn knn_classify(
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    test_x: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<usize>> {
    let n_train = train_x.nrows();
    if n_train != train_y.len() {
        return Err(Error::size(
            "training labels",
            n_train.to_string(),
            train_y.len().to_string(),
        ));
    }
    if n_train == 0 {
        return Err(Error::EmptySupport);
    }
    if k == 0 || k > n_train {
        return Err(Error::TooFewSamples { needed: k.max(1), got: n_train });
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::size(
            "feature dimensions",
            train_x.ncols().to_string(),
            test_x.ncols().to_string(),
        ));
    }
    let mut predictions = Vec::with_capacity(test_x.nrows());
    for t in 0..test_x.nrows() {
        let test_row = test_x.row(t);
        let mut order: Vec<(f64, usize)> = (0..n_train)
            .map(|i| ((train_x.row(i) - test_row).norm_squared(), i))
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes: std::collections::BTreeMap<usize, (usize, f64)> =
            std::collections::BTreeMap::new();
        for &(d, i) in order.iter().take(k) {
            let e = votes.entry(train_y[i]).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += d.sqrt();
        }
        let (&label, _) = votes
            .iter()
            .max_by(|(la, (ca, da)), (lb, (cb, db))| {
                ca.cmp(cb)
                    .then(db.partial_cmp(da).unwrap())
                    .then(lb.cmp(la))
            })
            .unwrap();
        predictions.push(label);
    }
    Ok(predictions)
}

/// Convenience: prediction accuracy against known test labels.
pub fn knn_accuracy(
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    test_x: &DMatrix<f64>,
    test_y: &[usize],
    k: usize,
) -> Result<f64> {
    if test_x.nrows() != test_y.len() {
        return Err(Error::size(
            "test labels",
            test_x.nrows().to_string(),
            test_y.len().to_string(),
        ));
    }
    if test_y.is_empty() {
        return Err(Error::EmptySupport);
    }
    let predictions = knn_classify(train_x, train_y, test_x, k)?;
    let hits = predictions.iter().zip(test_y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / test_y.len() as f64)
}

/// Default neighbor count for the classification protocol.
pub const DEFAULT_KNN_CLASSIFIER_K: usize = 5;

/// Classification protocol: `repeats` random splits with `train_fraction`
/// of the points used for training, mean accuracy over repeats.
pub fn knn_protocol(
    data: &DMatrix<f64>,
    labels: &[usize],
    train_fraction: f64,
    repeats: usize,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let n = data.nrows();
    if n != labels.len() {
        return Err(Error::size("labels", n.to_string(), labels.len().to_string()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(
            "train_fraction",
            train_fraction,
            "0 < train_fraction < 1",
        ));
    }
    if repeats == 0 {
        return Err(Error::param("repeats", repeats, "repeats >= 1"));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut total = 0.0;
    for rep in 0..repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (train_idx, test_idx) = idx.split_at(n_train);
        let train_x = data.select_rows(train_idx.iter());
        let test_x = data.select_rows(test_idx.iter());
        let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let test_y: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
        total += knn_accuracy(&train_x, &train_y, &test_x, &test_y, k.min(n_train))?;
    }
    Ok(total / repeats as f64)
}
