//! The core optimizer: fit a functional map between two Laplacian
//! eigenbases so that the induced low-rank matrix matches the observed
//! entries, optionally shaped by the Laplacian-commutativity regularizer.
//!
//! The reconstruction is `X = Φ·P·C·Qᵀ·Ψᵀ`, where `C` is the map and `P`,
//! `Q` are square alignment factors (identity unless `use_pq`). The
//! objective is
//!
//! ```text
//!   ‖(X − M) ⊙ S‖_F²  +  μ · Σ_{ij} C[i,j]² (λ_r[i] − λ_c[j])²
//! ```
//!
//! The penalty sum equals ‖Λ_r C − C Λ_c‖_F² for the k_r×k_c map stored
//! here (rows indexed by the row-graph spectrum); written for Cᵀ it is the
//! commutator form ‖Cᵀ Λ_r − Λ_c Cᵀ‖_F² — same scalar, transposed
//! bookkeeping. It vanishes iff C couples only spectrally matched
//! directions, and it is applied to `C` alone, never to the composite
//! `PCQᵀ`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::report::{ExperimentReport, IterationRecord};
use crate::spectral::SpectralBasis;

/// Partially observed matrix: values `M` and binary support `S`.
/// Unobserved value cells are stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<f64>,
    /// Support as (row, col, value), row-major order.
    observed: Vec<(usize, usize, f64)>,
}

impl MaskedMatrix {
    /// Validates the mask (entries in {0,1}), requires observed values to
    /// be finite, and normalizes unobserved cells to zero.
    pub fn new(values: DMatrix<f64>, mask: DMatrix<f64>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::size(
                "masked matrix",
                format!("{}x{}", values.nrows(), values.ncols()),
                format!("mask {}x{}", mask.nrows(), mask.ncols()),
            ));
        }
        let (m, n) = values.shape();
        let mut clean = DMatrix::zeros(m, n);
        let mut observed = Vec::new();
        for i in 0..m {
            for j in 0..n {
                match mask[(i, j)] {
                    s if s == 0.0 => {}
                    s if s == 1.0 => {
                        let v = values[(i, j)];
                        if !v.is_finite() {
                            return Err(Error::NonFinite {
                                context: format!("observed entry ({i}, {j})"),
                            });
                        }
                        clean[(i, j)] = v;
                        observed.push((i, j, v));
                    }
                    s => return Err(Error::param("mask entry", s, "mask entries in {0,1}")),
                }
            }
        }
        Ok(MaskedMatrix {
            values: clean,
            mask,
            observed,
        })
    }

    /// All-ones mask; the dimensionality-reduction case.
    pub fn fully_observed(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), 1.0);
        MaskedMatrix::new(values, mask)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<f64> {
        &self.mask
    }

    pub fn observed(&self) -> &[(usize, usize, f64)] {
        &self.observed
    }

    pub fn observed_count(&self) -> usize {
        self.observed.len()
    }
}

/// The map and its bases. `c` carries the signal; `p`, `q` are square
/// alignment factors that stay identity unless the fit frees them.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    pub c: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    use_pq: bool,
    row_basis: SpectralBasis,
    col_basis: SpectralBasis,
}

impl FunctionalMap {
    pub fn row_basis(&self) -> &SpectralBasis {
        &self.row_basis
    }

    pub fn col_basis(&self) -> &SpectralBasis {
        &self.col_basis
    }

    pub fn use_pq(&self) -> bool {
        self.use_pq
    }

    pub fn k_r(&self) -> usize {
        self.row_basis.k()
    }

    pub fn k_c(&self) -> usize {
        self.col_basis.k()
    }

    /// `Φ P C Qᵀ Ψᵀ`; rank ≤ min(k_r, k_c) by construction.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        reconstruct(self)
    }
}

/// First-order method used by [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Fixed-step gradient descent (reference method; needs tiny steps).
    PlainGd,
    /// Adam-style adaptive moments; the practical default.
    Adaptive,
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Optimizer::PlainGd => write!(f, "plain_gd"),
            Optimizer::Adaptive => write!(f, "adaptive"),
        }
    }
}

/// Everything [`fit`] needs besides the data: regularization, optimizer,
/// stopping rules, and the split seed.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Commutativity weight μ; 0 disables the regularizer entirely.
    pub mu: f64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub max_iters: usize,
    /// Early stopping: give up after this many consecutive validation
    /// evaluations without improvement.
    pub patience: usize,
    /// Validation cadence in iterations.
    pub eval_every: usize,
    /// An evaluation counts as an improvement only if it beats the best
    /// validation RMSE by this relative margin.
    pub min_rel_improvement: f64,
    /// Fraction of observed entries held out for validation. Zero disables
    /// early stopping and returns the final iterate.
    pub val_fraction: f64,
    /// Free the alignment factors P and Q.
    pub use_pq: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            mu: 1e-5,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adaptive,
            max_iters: 20_000,
            patience: 20,
            eval_every: 100,
            min_rel_improvement: 1e-4,
            val_fraction: 0.05,
            use_pq: true,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Reference configuration: plain gradient descent at the conservative
    /// step size (1e-5) that the adaptive default replaces.
    pub fn plain_gd_reference() -> Self {
        FitConfig {
            optimizer: Optimizer::PlainGd,
            learning_rate: 1e-5,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::param("mu", self.mu, "mu >= 0"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param(
                "learning_rate",
                self.learning_rate,
                "learning_rate > 0",
            ));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(Error::param(
                "val_fraction",
                self.val_fraction,
                "0 <= val_fraction < 1",
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", self.max_iters, "max_iters >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every", self.eval_every, "eval_every >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::param("patience", self.patience, "patience >= 1"));
        }
        if !(self.min_rel_improvement >= 0.0 && self.min_rel_improvement < 1.0) {
            return Err(Error::param(
                "min_rel_improvement",
                self.min_rel_improvement,
                "0 <= min_rel_improvement < 1",
            ));
        }
        Ok(())
    }
}

/// Gradients of [`objective`] with respect to the free variables. `p` and
/// `q` are absent when the map holds them fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub c: DMatrix<f64>,
    pub p: Option<DMatrix<f64>>,
    pub q: Option<DMatrix<f64>>,
}

/// P = I, Q = I, C = Φᵀ (M⊙S) Ψ — the orthonormal projection of the
/// observed data onto the basis pair.
pub fn init_map(
    row_basis: &SpectralBasis,
    col_basis: &SpectralBasis,
    masked: &MaskedMatrix,
    use_pq: bool,
) -> Result<FunctionalMap> {
    let (m, n) = masked.shape();
    if row_basis.n() != m {
        return Err(Error::size(
            "row basis length",
            m.to_string(),
            row_basis.n().to_string(),
        ));
    }
    if col_basis.n() != n {
        return Err(Error::size(
            "column basis length",
            n.to_string(),
            col_basis.n().to_string(),
        ));
    }
    let c = row_basis.vectors.transpose() * masked.values() * &col_basis.vectors;
    Ok(FunctionalMap {
        c,
        p: DMatrix::identity(row_basis.k(), row_basis.k()),
        q: DMatrix::identity(col_basis.k(), col_basis.k()),
        use_pq,
        row_basis: row_basis.clone(),
        col_basis: col_basis.clone(),
    })
}

/// ‖(ΦPCQᵀΨᵀ − M) ⊙ S‖_F².
pub fn data_term(fm: &FunctionalMap, masked: &MaskedMatrix) -> Result<f64> {
    check_shapes(fm, masked)?;
    let engine = SupportEngine::new(fm);
    Ok(engine.residuals(masked.observed()).iter().map(|r| r * r).sum())
}

/// Σ_{ij} C[i,j]²·(λ_r[i] − λ_c[j])², the squared commutator energy of C
/// with the two spectra. Applied to C only, regardless of P and Q.
pub fn commutativity_reg(fm: &FunctionalMap) -> f64 {
    let lr = &fm.row_basis.values;
    let lc = &fm.col_basis.values;
    let mut sum = 0.0;
    for i in 0..fm.k_r() {
        for j in 0..fm.k_c() {
            let d = lr[i] - lc[j];
            sum += fm.c[(i, j)] * fm.c[(i, j)] * d * d;
        }
    }
    sum
}

/// data_term + μ·commutativity_reg. μ = 0 is exactly the data term (the
/// regularizer is skipped, not multiplied by zero).
pub fn objective(fm: &FunctionalMap, masked: &MaskedMatrix, mu: f64) -> Result<f64> {
    let data = data_term(fm, masked)?;
    if mu > 0.0 {
        Ok(data + mu * commutativity_reg(fm))
    } else {
        Ok(data)
    }
}

/// Analytic gradients of [`objective`]. With T₁ = Φᵀ R Ψ (R the masked
/// residual):  ∇C = 2 Pᵀ T₁ Q (+ μ·2·C⊙D², D = λ_r ⊖ λ_c),
/// ∇P = 2 T₁ Q Cᵀ, ∇Q = 2 T₁ᵀ P C.
pub fn gradient(fm: &FunctionalMap, masked: &MaskedMatrix, mu: f64) -> Result<Gradients> {
    check_shapes(fm, masked)?;
    let engine = SupportEngine::new(fm);
    let residuals = engine.residuals(masked.observed());
    let t1 = engine.projected_residual(masked.observed(), &residuals);
    Ok(assemble_gradients(fm, &t1, mu))
}

fn assemble_gradients(fm: &FunctionalMap, t1: &DMatrix<f64>, mu: f64) -> Gradients {
    let mut grad_c = if fm.use_pq {
        fm.p.transpose() * t1 * &fm.q
    } else {
        t1.clone()
    };
    grad_c *= 2.0;
    if mu > 0.0 {
        let lr = &fm.row_basis.values;
        let lc = &fm.col_basis.values;
        for i in 0..fm.k_r() {
            for j in 0..fm.k_c() {
                let d = lr[i] - lc[j];
                grad_c[(i, j)] += mu * 2.0 * fm.c[(i, j)] * d * d;
            }
        }
    }
    if fm.use_pq {
        let grad_p = 2.0 * t1 * &fm.q * fm.c.transpose();
        let grad_q = 2.0 * t1.transpose() * &fm.p * &fm.c;
        Gradients {
            c: grad_c,
            p: Some(grad_p),
            q: Some(grad_q),
        }
    } else {
        Gradients {
            c: grad_c,
            p: None,
            q: None,
        }
    }
}

/// Evaluates the reconstruction only on a support list. Holds the
/// transposed products so each entry costs one k-length dot product.
struct SupportEngine {
    /// (ΦP)ᵀ, k_r×m: column i is the i-th row of ΦP.
    at: DMatrix<f64>,
    /// C·(ΨQ)ᵀ, k_r×n.
    g: DMatrix<f64>,
    /// Φᵀ, k_r×m (for residual projection).
    phi_t: DMatrix<f64>,
    /// Ψ, n×k_c.
    psi: DMatrix<f64>,
}

impl SupportEngine {
    fn new(fm: &FunctionalMap) -> Self {
        let phi_t = fm.row_basis.vectors.transpose();
        let psi = fm.col_basis.vectors.clone();
        let (at, g) = if fm.use_pq {
            let at = fm.p.transpose() * &phi_t;
            let bt = fm.q.transpose() * psi.transpose();
            (at, &fm.c * bt)
        } else {
            (phi_t.clone(), &fm.c * psi.transpose())
        };
        SupportEngine { at, g, phi_t, psi }
    }

    /// X_ij − v for each (i, j, v) in `entries`.
    fn residuals(&self, entries: &[(usize, usize, f64)]) -> Vec<f64> {
        entries
            .iter()
            .map(|&(i, j, v)| self.at.column(i).dot(&self.g.column(j)) - v)
            .collect()
    }

    /// T₁ = Φᵀ R Ψ where R is the residual supported on `entries`.
    fn projected_residual(
        &self,
        entries: &[(usize, usize, f64)],
        residuals: &[f64],
    ) -> DMatrix<f64> {
        let kr = self.phi_t.nrows();
        let n = self.psi.nrows();
        let mut u = DMatrix::zeros(kr, n);
        for (&(i, j, _), &r) in entries.iter().zip(residuals) {
            u.column_mut(j).axpy(r, &self.phi_t.column(i), 1.0);
        }
        u * &self.psi
    }

    fn rmse(&self, entries: &[(usize, usize, f64)]) -> f64 {
        if entries.is_empty() {
            return f64::NAN;
        }
        let ss: f64 = self.residuals(entries).iter().map(|r| r * r).sum();
        (ss / entries.len() as f64).sqrt()
    }
}

fn check_shapes(fm: &FunctionalMap, masked: &MaskedMatrix) -> Result<()> {
    let (m, n) = masked.shape();
    if fm.row_basis.n() != m || fm.col_basis.n() != n {
        return Err(Error::size(
            "masked matrix",
            format!("{}x{}", fm.row_basis.n(), fm.col_basis.n()),
            format!("{m}x{n}"),
        ));
    }
    Ok(())
}

/// Minimizes the objective over the observed entries.
///
/// The support is split (seeded) into train and validation parts; descent
/// uses the train part only, validation RMSE is evaluated every
/// `eval_every` iterations, and the iterate with the best validation RMSE
/// is returned once `patience` evaluations pass without improvement (or
/// `max_iters` is reached). With `val_fraction = 0` the final iterate is
/// returned instead. A non-finite objective aborts with a divergence error
/// naming the iteration.
pub fn fit(
    masked: &MaskedMatrix,
    row_basis: &SpectralBasis,
    col_basis: &SpectralBasis,
    cfg: &FitConfig,
) -> Result<(FunctionalMap, ExperimentReport)> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    if masked.observed_count() == 0 {
        return Err(Error::EmptySupport);
    }

    // Seeded validation split over the observed entries.
    let mut shuffled: Vec<(usize, usize, f64)> = masked.observed().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffled.shuffle(&mut rng);
    let n_val = ((cfg.val_fraction * shuffled.len() as f64).round() as usize)
        .min(shuffled.len() - 1);
    let (val_entries, train_entries) = shuffled.split_at(n_val);

    // The initial projection sees only the training support; validation
    // entries influence nothing but the stopping rule.
    let (m, n) = masked.shape();
    let mut train_values = DMatrix::zeros(m, n);
    let mut train_mask = DMatrix::zeros(m, n);
    for &(i, j, v) in train_entries {
        train_values[(i, j)] = v;
        train_mask[(i, j)] = 1.0;
    }
    let train_masked = MaskedMatrix::new(train_values, train_mask)?;
    let mut fm = init_map(row_basis, col_basis, &train_masked, cfg.use_pq)?;

    let mut report = ExperimentReport::new("fit", cfg.seed);
    report.set_config("m", m);
    report.set_config("n", n);
    report.set_config("k_r", fm.k_r());
    report.set_config("k_c", fm.k_c());
    report.set_config("mu", format!("{:?}", cfg.mu));
    report.set_config("learning_rate", format!("{:?}", cfg.learning_rate));
    report.set_config("optimizer", cfg.optimizer);
    report.set_config("max_iters", cfg.max_iters);
    report.set_config("patience", cfg.patience);
    report.set_config("eval_every", cfg.eval_every);
    report.set_config("min_rel_improvement", format!("{:?}", cfg.min_rel_improvement));
    report.set_config("val_fraction", format!("{:?}", cfg.val_fraction));
    report.set_config("use_pq", cfg.use_pq);
    report.set_config("observed_entries", masked.observed_count());
    report.set_config("train_entries", train_entries.len());
    report.set_config("val_entries", val_entries.len());

    let mut adam = AdamState::new(&fm, cfg.use_pq);
    let mut best: Option<(f64, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, usize)> = None;
    let mut stall = 0usize;
    let mut early_stopped = false;
    let mut last_iteration = 0usize;

    for iteration in 0..=cfg.max_iters {
        last_iteration = iteration;
        let engine = SupportEngine::new(&fm);
        let residuals = engine.residuals(train_entries);
        let mut train_objective: f64 = residuals.iter().map(|r| r * r).sum();
        if cfg.mu > 0.0 {
            train_objective += cfg.mu * commutativity_reg(&fm);
        }
        if !train_objective.is_finite() {
            return Err(Error::Divergence { iteration });
        }

        let mut record = IterationRecord {
            iteration,
            train_objective,
            val_rmse: None,
        };

        if !val_entries.is_empty() && (iteration % cfg.eval_every == 0 || iteration == cfg.max_iters)
        {
            let val_rmse = engine.rmse(val_entries);
            if !val_rmse.is_finite() {
                return Err(Error::Divergence { iteration });
            }
            record.val_rmse = Some(val_rmse);
            let improved = match &best {
                None => true,
                Some((best_val, ..)) => val_rmse < best_val * (1.0 - cfg.min_rel_improvement),
            };
            if improved {
                best = Some((val_rmse, fm.c.clone(), fm.p.clone(), fm.q.clone(), iteration));
                stall = 0;
            } else {
                stall += 1;
                if stall >= cfg.patience {
                    report.iterations.push(record);
                    early_stopped = true;
                    break;
                }
            }
        }
        report.iterations.push(record);
        if iteration == cfg.max_iters {
            break;
        }

        let t1 = engine.projected_residual(train_entries, &residuals);
        let grads = assemble_gradients(&fm, &t1, cfg.mu);
        match cfg.optimizer {
            Optimizer::PlainGd => {
                fm.c -= &grads.c * cfg.learning_rate;
                if let (Some(gp), Some(gq)) = (&grads.p, &grads.q) {
                    fm.p -= gp * cfg.learning_rate;
                    fm.q -= gq * cfg.learning_rate;
                }
            }
            Optimizer::Adaptive => adam.step(&mut fm, &grads, cfg.learning_rate),
        }
    }

    let (best_val_rmse, best_iteration) = match best {
        Some((val, c, p, q, at_iter)) => {
            fm.c = c;
            fm.p = p;
            fm.q = q;
            (Some(val), at_iter)
        }
        None => (None, last_iteration),
    };

    report.set_metric("iterations_run", last_iteration as f64);
    report.set_metric("early_stopped", if early_stopped { 1.0 } else { 0.0 });
    report.set_metric("best_iteration", best_iteration as f64);
    if let Some(v) = best_val_rmse {
        report.set_metric("val_rmse", v);
    }
    let final_engine = SupportEngine::new(&fm);
    report.set_metric("train_rmse", final_engine.rmse(train_entries));
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((fm, report))
}

struct AdamState {
    t: u32,
    mc: DMatrix<f64>,
    vc: DMatrix<f64>,
    mp: Option<(DMatrix<f64>, DMatrix<f64>)>,
    mq: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(fm: &FunctionalMap, use_pq: bool) -> Self {
        let zeros = |r: usize, c: usize| (DMatrix::zeros(r, c), DMatrix::zeros(r, c));
        let (mc, vc) = zeros(fm.k_r(), fm.k_c());
        AdamState {
            t: 0,
            mc,
            vc,
            mp: use_pq.then(|| zeros(fm.k_r(), fm.k_r())),
            mq: use_pq.then(|| zeros(fm.k_c(), fm.k_c())),
        }
    }

    fn step(&mut self, fm: &mut FunctionalMap, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        Self::update(&mut fm.c, &grads.c, &mut self.mc, &mut self.vc, lr, bc1, bc2);
        if let (Some(gp), Some((mp, vp))) = (&grads.p, &mut self.mp) {
            Self::update(&mut fm.p, gp, mp, vp, lr, bc1, bc2);
        }
        if let (Some(gq), Some((mq, vq))) = (&grads.q, &mut self.mq) {
            Self::update(&mut fm.q, gq, mq, vq, lr, bc1, bc2);
        }
    }

    fn update(
        param: &mut DMatrix<f64>,
        grad: &DMatrix<f64>,
        m: &mut DMatrix<f64>,
        v: &mut DMatrix<f64>,
        lr: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for idx in 0..param.len() {
            let g = grad[idx];
            m[idx] = ADAM_BETA1 * m[idx] + (1.0 - ADAM_BETA1) * g;
            v[idx] = ADAM_BETA2 * v[idx] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[idx] / bc1;
            let v_hat = v[idx] / bc2;
            param[idx] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// `Φ P C Qᵀ Ψᵀ` as a dense matrix.
pub fn reconstruct(fm: &FunctionalMap) -> DMatrix<f64> {
    let left = if fm.use_pq {
        &fm.row_basis.vectors * &fm.p * &fm.c
    } else {
        &fm.row_basis.vectors * &fm.c
    };
    if fm.use_pq {
        let right = &fm.col_basis.vectors * &fm.q;
        left * right.transpose()
    } else {
        left * fm.col_basis.vectors.transpose()
    }
}

/// Dimensionality reduction: fit with an all-ones mask and return the
/// reconstruction as the new representation of `data`.
pub fn reduce_dimension(
    data: &DMatrix<f64>,
    row_basis: &SpectralBasis,
    col_basis: &SpectralBasis,
    cfg: &FitConfig,
) -> Result<(DMatrix<f64>, ExperimentReport)> {
    let masked = MaskedMatrix::fully_observed(data.clone())?;
    let (fm, mut report) = fit(&masked, row_basis, col_basis, cfg)?;
    report.command = "reduce".into();
    Ok((reconstruct(&fm), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::laplacian;
    use crate::spectral::smallest_eigenpairs;
    use crate::synth::{basis_consistent_matrix, community_graph, sample_mask};
    use rand::Rng;

    fn bases(m: usize, n: usize, k: usize, seed: u64) -> (SpectralBasis, SpectralBasis) {
        let gr = community_graph(m, 3, 0.6, 0.05, seed).unwrap();
        let gc = community_graph(n, 3, 0.6, 0.05, seed + 1).unwrap();
        (
            smallest_eigenpairs(&laplacian(&gr), k).unwrap(),
            smallest_eigenpairs(&laplacian(&gc), k).unwrap(),
        )
    }

    fn random_map(
        rb: &SpectralBasis,
        cb: &SpectralBasis,
        use_pq: bool,
        seed: u64,
    ) -> FunctionalMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        FunctionalMap {
            c: g(rb.k(), cb.k()),
            p: if use_pq {
                g(rb.k(), rb.k())
            } else {
                DMatrix::identity(rb.k(), rb.k())
            },
            q: if use_pq {
                g(cb.k(), cb.k())
            } else {
                DMatrix::identity(cb.k(), cb.k())
            },
            use_pq,
            row_basis: rb.clone(),
            col_basis: cb.clone(),
        }
    }

    fn random_masked(m: usize, n: usize, density: f64, seed: u64) -> MaskedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let values = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let mask = sample_mask(m, n, density, seed).unwrap();
        MaskedMatrix::new(values, mask).unwrap()
    }

    #[test]
    fn masked_matrix_normalizes_and_validates() {
        let mut values = DMatrix::from_element(2, 2, 7.0);
        values[(0, 1)] = f64::NAN; // unobserved: must be tolerated and zeroed
        let mask = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mm = MaskedMatrix::new(values, mask).unwrap();
        assert_eq!(mm.values()[(0, 1)], 0.0);
        assert_eq!(mm.observed_count(), 2);

        let bad_mask = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(MaskedMatrix::new(DMatrix::zeros(2, 2), bad_mask).is_err());

        let mut nan_observed = DMatrix::zeros(2, 2);
        nan_observed[(0, 0)] = f64::NAN;
        let mask = DMatrix::from_element(2, 2, 1.0);
        assert!(MaskedMatrix::new(nan_observed, mask).is_err());
    }

    #[test]
    fn init_recovers_planted_coefficients() {
        let (rb, cb) = bases(30, 40, 6, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c0 = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let m = &rb.vectors * &c0 * cb.vectors.transpose();
        let masked = MaskedMatrix::fully_observed(m).unwrap();
        let fm = init_map(&rb, &cb, &masked, false).unwrap();
        assert!((&fm.c - &c0).amax() < 1e-8);
        assert_eq!(fm.p, DMatrix::identity(6, 6));
        assert_eq!(fm.q, DMatrix::identity(6, 6));
    }

    #[test]
    fn init_zero_mask_gives_zero_map() {
        let (rb, cb) = bases(20, 25, 4, 1);
        let masked =
            MaskedMatrix::new(DMatrix::from_element(20, 25, 3.0), DMatrix::zeros(20, 25)).unwrap();
        let fm = init_map(&rb, &cb, &masked, true).unwrap();
        assert!(fm.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_k1_is_scaled_grand_sum() {
        // Connected graphs, k = 1: both basis vectors are constant 1/√dim,
        // so C = (sum of observed values)/√(m·n). Complete graphs keep the
        // kernel one-dimensional.
        let gr = community_graph(12, 1, 1.0, 0.0, 2).unwrap();
        let gc = community_graph(18, 1, 1.0, 0.0, 3).unwrap();
        let rb = smallest_eigenpairs(&laplacian(&gr), 1).unwrap();
        let cb = smallest_eigenpairs(&laplacian(&gc), 1).unwrap();
        let masked = random_masked(12, 18, 0.4, 3);
        let fm = init_map(&rb, &cb, &masked, false).unwrap();
        let grand: f64 = masked.observed().iter().map(|&(_, _, v)| v).sum();
        let want = grand / (12.0f64 * 18.0).sqrt();
        assert!((fm.c[(0, 0)] - want).abs() < 1e-10, "{} vs {want}", fm.c[(0, 0)]);
    }

    #[test]
    fn data_term_zero_when_matching_on_support() {
        let (rb, cb) = bases(15, 20, 5, 3);
        let fm = random_map(&rb, &cb, true, 4);
        let x = reconstruct(&fm);
        let mask = sample_mask(15, 20, 0.3, 5).unwrap();
        let masked = MaskedMatrix::new(x, mask).unwrap();
        let dt = data_term(&fm, &masked).unwrap();
        assert!(dt <= 1e-22, "{dt}");
    }

    #[test]
    fn data_term_single_entry_squared_deviation() {
        let (rb, cb) = bases(10, 12, 3, 6);
        let fm = random_map(&rb, &cb, false, 7);
        let x = reconstruct(&fm);
        let mut mask = DMatrix::zeros(10, 12);
        mask[(4, 7)] = 1.0;
        let mut values = DMatrix::zeros(10, 12);
        let delta = 0.37;
        values[(4, 7)] = x[(4, 7)] + delta;
        let masked = MaskedMatrix::new(values, mask).unwrap();
        let dt = data_term(&fm, &masked).unwrap();
        assert!((dt - delta * delta).abs() < 1e-12);
    }

    #[test]
    fn data_term_matches_elementwise_oracle() {
        for seed in 0..20u64 {
            let (rb, cb) = bases(8, 9, 3, seed);
            let use_pq = seed % 2 == 0;
            let fm = random_map(&rb, &cb, use_pq, seed + 40);
            let masked = random_masked(8, 9, 0.5, seed + 80);

            // Naive oracle: reconstruct X entry by entry with index loops.
            let mut oracle = 0.0;
            let pc = &fm.p * &fm.c;
            let pcq = pc * fm.q.transpose();
            for &(i, j, v) in masked.observed() {
                let mut x = 0.0;
                for a in 0..fm.k_r() {
                    for b in 0..fm.k_c() {
                        x += rb.vectors[(i, a)] * pcq[(a, b)] * cb.vectors[(j, b)];
                    }
                }
                oracle += (x - v) * (x - v);
            }
            let got = data_term(&fm, &masked).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * (1.0 + oracle), "seed {seed}");
        }
    }

    fn diag_basis(values: &[f64], n: usize) -> SpectralBasis {
        // Only the spectrum matters for the regularizer; use any orthonormal
        // vectors.
        let mut vectors = DMatrix::zeros(n, values.len());
        for j in 0..values.len() {
            vectors[(j, j)] = 1.0;
        }
        SpectralBasis {
            vectors,
            values: nalgebra::DVector::from_column_slice(values),
        }
    }

    #[test]
    fn commutativity_zero_for_diagonal_c_on_equal_spectra() {
        let rb = diag_basis(&[0.0, 1.0, 2.5], 5);
        let cb = diag_basis(&[0.0, 1.0, 2.5], 6);
        let mut fm = random_map(&rb, &cb, false, 1);
        fm.c = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[3.0, -1.0, 0.5]));
        assert_eq!(commutativity_reg(&fm), 0.0);

        fm.c = DMatrix::identity(3, 3);
        assert_eq!(commutativity_reg(&fm), 0.0);
    }

    #[test]
    fn commutativity_single_entry_closed_form() {
        let rb = diag_basis(&[0.0, 1.0, 4.0], 5);
        let cb = diag_basis(&[0.5, 2.0], 6);
        let mut fm = random_map(&rb, &cb, false, 2);
        fm.c = DMatrix::zeros(3, 2);
        let c = -1.7;
        fm.c[(2, 0)] = c;
        // Row index pairs with the row spectrum: (λ_r[2] − λ_c[0])².
        let want = c * c * (4.0 - 0.5) * (4.0 - 0.5);
        assert!((commutativity_reg(&fm) - want).abs() < 1e-12);
    }

    #[test]
    fn commutativity_equals_commutator_frobenius_norm() {
        for seed in 0..10u64 {
            let (rb, cb) = bases(10, 14, 4, seed);
            let fm = random_map(&rb, &cb, false, seed + 300);
            let lam_r = DMatrix::from_diagonal(&rb.values);
            let lam_c = DMatrix::from_diagonal(&cb.values);
            let commutator = &lam_r * &fm.c - &fm.c * &lam_c;
            let want = commutator.norm_squared();
            assert!((commutativity_reg(&fm) - want).abs() <= 1e-12 * (1.0 + want));
        }
    }

    #[test]
    fn objective_composes_terms() {
        for seed in 0..10u64 {
            let (rb, cb) = bases(9, 11, 4, seed);
            let fm = random_map(&rb, &cb, seed % 2 == 0, seed + 100);
            let masked = random_masked(9, 11, 0.4, seed + 200);
            let mu = 0.37;
            let want = data_term(&fm, &masked).unwrap() + mu * commutativity_reg(&fm);
            let got = objective(&fm, &masked, mu).unwrap();
            assert!((got - want).abs() <= 1e-12 * (1.0 + want));

            // μ = 0 is the data term bit for bit.
            assert_eq!(
                objective(&fm, &masked, 0.0).unwrap(),
                data_term(&fm, &masked).unwrap()
            );
        }
    }

    fn fd_gradient(
        fm: &FunctionalMap,
        masked: &MaskedMatrix,
        mu: f64,
        which: char,
        h: f64,
    ) -> DMatrix<f64> {
        let shape = match which {
            'c' => fm.c.shape(),
            'p' => fm.p.shape(),
            _ => fm.q.shape(),
        };
        let mut out = DMatrix::zeros(shape.0, shape.1);
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let mut plus = fm.clone();
                let mut minus = fm.clone();
                match which {
                    'c' => {
                        plus.c[(i, j)] += h;
                        minus.c[(i, j)] -= h;
                    }
                    'p' => {
                        plus.p[(i, j)] += h;
                        minus.p[(i, j)] -= h;
                    }
                    _ => {
                        plus.q[(i, j)] += h;
                        minus.q[(i, j)] -= h;
                    }
                }
                let f_plus = objective(&plus, masked, mu).unwrap();
                let f_minus = objective(&minus, masked, mu).unwrap();
                out[(i, j)] = (f_plus - f_minus) / (2.0 * h);
            }
        }
        out
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / a.norm().max(1e-12)
    }

    #[test]
    fn gradients_match_central_differences() {
        // 20 random instances mixing use_pq and mu settings.
        for seed in 0..20u64 {
            let (rb, cb) = bases(8, 10, 3, seed);
            let use_pq = seed % 2 == 0;
            let mu = if seed % 3 == 0 { 0.0 } else { 0.01 * (seed as f64 + 1.0) };
            let fm = random_map(&rb, &cb, use_pq, seed + 700);
            let masked = random_masked(8, 10, 0.5, seed + 900);

            let grads = gradient(&fm, &masked, mu).unwrap();
            let h = 1e-5;
            let fd_c = fd_gradient(&fm, &masked, mu, 'c', h);
            assert!(
                rel_err(&fd_c, &grads.c) <= 1e-5,
                "seed {seed}: C gradient off by {}",
                rel_err(&fd_c, &grads.c)
            );
            if use_pq {
                let fd_p = fd_gradient(&fm, &masked, mu, 'p', h);
                let fd_q = fd_gradient(&fm, &masked, mu, 'q', h);
                assert!(rel_err(&fd_p, grads.p.as_ref().unwrap()) <= 1e-5, "seed {seed}: P");
                assert!(rel_err(&fd_q, grads.q.as_ref().unwrap()) <= 1e-5, "seed {seed}: Q");
            } else {
                assert!(grads.p.is_none() && grads.q.is_none());
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_global_minimum() {
        let (rb, cb) = bases(12, 15, 4, 30);
        let planted = random_map(&rb, &cb, false, 31);
        let m = reconstruct(&planted);
        let masked = MaskedMatrix::fully_observed(m).unwrap();
        let fm = init_map(&rb, &cb, &masked, false).unwrap();
        let grads = gradient(&fm, &masked, 0.0).unwrap();
        assert!(grads.c.norm() <= 1e-8, "{}", grads.c.norm());
    }

    #[test]
    fn objective_is_convex_in_c_along_segments() {
        for seed in 0..10u64 {
            let (rb, cb) = bases(10, 12, 4, seed);
            let masked = random_masked(10, 12, 0.4, seed + 50);
            let fm1 = random_map(&rb, &cb, false, seed + 60);
            let mut fm2 = fm1.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 70);
            fm2.c = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let mu = 0.02;
            let f1 = objective(&fm1, &masked, mu).unwrap();
            let f2 = objective(&fm2, &masked, mu).unwrap();
            for &alpha in &[0.25, 0.5, 0.75] {
                let mut mid = fm1.clone();
                mid.c = &fm1.c * alpha + &fm2.c * (1.0 - alpha);
                let fmid = objective(&mid, &masked, mu).unwrap();
                let chord = alpha * f1 + (1.0 - alpha) * f2;
                assert!(
                    fmid <= chord + 1e-10 * (1.0 + chord),
                    "seed {seed} alpha {alpha}: {fmid} > {chord}"
                );
            }
        }
    }

    #[test]
    fn plain_gd_descends_monotonically() {
        let (rb, cb) = bases(20, 25, 5, 80);
        // Unit-scale data: basis-consistent matrix rescaled to unit entries.
        let raw = basis_consistent_matrix(&rb, &cb, 3, 81).unwrap();
        let scale = 1.0 / raw.amax();
        let masked = MaskedMatrix::new(raw * scale, sample_mask(20, 25, 0.5, 82).unwrap()).unwrap();
        let cfg = FitConfig {
            optimizer: Optimizer::PlainGd,
            learning_rate: 1e-6,
            max_iters: 400,
            val_fraction: 0.0,
            mu: 1e-5,
            ..FitConfig::default()
        };
        let (_, report) = fit(&masked, &rb, &cb, &cfg).unwrap();
        for w in report.iterations.windows(2) {
            assert!(
                w[1].train_objective <= w[0].train_objective + 1e-12,
                "objective rose: {} -> {}",
                w[0].train_objective,
                w[1].train_objective
            );
        }
    }

    #[test]
    fn fit_reaches_zero_on_fully_observed_consistent_data() {
        let (rb, cb) = bases(30, 40, 8, 90);
        let m = basis_consistent_matrix(&rb, &cb, 5, 91).unwrap();
        let masked = MaskedMatrix::fully_observed(m).unwrap();
        let cfg = FitConfig {
            mu: 0.0,
            use_pq: false,
            max_iters: 4000,
            ..FitConfig::default()
        };
        let (fm, _) = fit(&masked, &rb, &cb, &cfg).unwrap();
        let dt = data_term(&fm, &masked).unwrap();
        assert!(dt <= 1e-10, "final data term {dt}");
    }

    #[test]
    fn fit_empty_support_errors() {
        let (rb, cb) = bases(10, 10, 3, 100);
        let masked =
            MaskedMatrix::new(DMatrix::zeros(10, 10), DMatrix::zeros(10, 10)).unwrap();
        assert!(matches!(
            fit(&masked, &rb, &cb, &FitConfig::default()),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn fit_divergence_names_iteration() {
        let (rb, cb) = bases(12, 14, 4, 110);
        let masked = random_masked(12, 14, 0.5, 111);
        let cfg = FitConfig {
            optimizer: Optimizer::PlainGd,
            learning_rate: 1e6,
            max_iters: 5000,
            val_fraction: 0.0,
            ..FitConfig::default()
        };
        match fit(&masked, &rb, &cb, &cfg) {
            Err(Error::Divergence { iteration }) => assert!(iteration > 0),
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn fit_is_deterministic_and_mu_zero_matches_fm_baseline() {
        let (rb, cb) = bases(20, 25, 5, 120);
        let m = basis_consistent_matrix(&rb, &cb, 4, 121).unwrap();
        let masked = MaskedMatrix::new(m, sample_mask(20, 25, 0.4, 122).unwrap()).unwrap();

        // "Ours" config with the regularizer switched off...
        let ours_mu0 = FitConfig {
            mu: 0.0,
            use_pq: false,
            max_iters: 500,
            seed: 7,
            ..FitConfig::default()
        };
        // ...versus an explicitly constructed baseline config.
        let baseline = FitConfig {
            mu: 0.0,
            use_pq: false,
            max_iters: 500,
            seed: 7,
            ..FitConfig::default()
        };
        let (fm_a, rep_a) = fit(&masked, &rb, &cb, &ours_mu0).unwrap();
        let (fm_b, rep_b) = fit(&masked, &rb, &cb, &baseline).unwrap();
        let xa = reconstruct(&fm_a);
        let xb = reconstruct(&fm_b);
        assert_eq!(
            xa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            xb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(rep_a.payload_string(), rep_b.payload_string());
    }

    #[test]
    fn fit_tolerates_empty_mask_rows_and_columns() {
        let (rb, cb) = bases(15, 18, 4, 130);
        let m = basis_consistent_matrix(&rb, &cb, 3, 131).unwrap();
        let mut mask = sample_mask(15, 18, 0.5, 132).unwrap();
        for j in 0..18 {
            mask[(4, j)] = 0.0; // row 4 fully unobserved
        }
        for i in 0..15 {
            mask[(i, 9)] = 0.0; // column 9 fully unobserved
        }
        let masked = MaskedMatrix::new(m, mask).unwrap();
        let cfg = FitConfig {
            max_iters: 300,
            ..FitConfig::default()
        };
        let (fm, _) = fit(&masked, &rb, &cb, &cfg).unwrap();
        assert!(reconstruct(&fm).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reconstruction_rank_is_structurally_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(140);
        for seed in 0..15u64 {
            let k = rng.gen_range(1..6);
            let (rb, cb) = bases(18, 22, k, seed);
            let fm = random_map(&rb, &cb, seed % 2 == 0, seed + 400);
            let x = reconstruct(&fm);
            let sv = x.svd(false, false).singular_values;
            let max = sv.max();
            let rank = sv.iter().filter(|&&s| s > 1e-8 * max).count();
            assert!(rank <= k, "rank {rank} exceeds k {k}");
        }
    }

    #[test]
    fn reconstruct_zero_map_and_complete_basis() {
        let (rb, cb) = bases(10, 12, 3, 150);
        let mut fm = random_map(&rb, &cb, false, 151);
        fm.c = DMatrix::zeros(3, 3);
        assert!(reconstruct(&fm).iter().all(|&v| v == 0.0));

        // Full bases: projection then reconstruction is the identity.
        let gr = community_graph(10, 2, 0.7, 0.1, 152).unwrap();
        let gc = community_graph(12, 2, 0.7, 0.1, 153).unwrap();
        let rb_full = smallest_eigenpairs(&laplacian(&gr), 10).unwrap();
        let cb_full = smallest_eigenpairs(&laplacian(&gc), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(154);
        let m = DMatrix::from_fn(10, 12, |_, _| rng.gen_range(-1.0..1.0));
        let masked = MaskedMatrix::fully_observed(m.clone()).unwrap();
        let fm = init_map(&rb_full, &cb_full, &masked, false).unwrap();
        assert!((reconstruct(&fm) - &m).amax() < 1e-8);
    }

    #[test]
    fn reduce_dimension_identity_on_consistent_data() {
        let (rb, cb) = bases(25, 30, 6, 160);
        let data = basis_consistent_matrix(&rb, &cb, 6, 161).unwrap();
        let cfg = FitConfig {
            mu: 0.0,
            use_pq: false,
            max_iters: 3000,
            ..FitConfig::default()
        };
        let (x, report) = reduce_dimension(&data, &rb, &cb, &cfg).unwrap();
        assert_eq!(report.command, "reduce");
        let rel = (&x - &data).norm() / data.norm();
        assert!(rel <= 1e-6, "relative error {rel}");
    }

    #[test]
    fn reduce_dimension_bounds_rank() {
        let (rb, cb) = bases(20, 24, 4, 170);
        let mut rng = ChaCha8Rng::seed_from_u64(171);
        let data = DMatrix::from_fn(20, 24, |_, _| rng.gen_range(-1.0..1.0));
        let cfg = FitConfig {
            max_iters: 200,
            ..FitConfig::default()
        };
        let (x, _) = reduce_dimension(&data, &rb, &cb, &cfg).unwrap();
        let sv = x.svd(false, false).singular_values;
        let rank = sv.iter().filter(|&&s| s > 1e-8 * sv.max()).count();
        assert!(rank <= 4);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.mu = -1.0;
        assert!(cfg.validate().is_err());
        cfg = FitConfig {
            learning_rate: 0.0,
            ..FitConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = FitConfig {
            val_fraction: 1.0,
            ..FitConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
