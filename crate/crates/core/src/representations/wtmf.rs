//! Weighted textual matrix factorization by alternating least squares.
//!
//! Factors the TF-IDF term-by-sentence matrix X (V x N) into P (V x D) and
//! Q (N x D) minimizing
//!
//! ```text
//! sum_{t,c} W_tc (X_tc - P_t . Q_c)^2 + lambda (|P|^2 + |Q|^2)
//! ```
//!
//! with W_tc = 1 on observed (nonzero) cells and `w_missing` elsewhere, so
//! the factorization models what a response says without being dominated by
//! the vastly larger set of words it does not use. Each sweep updates every
//! P row then every Q row by a closed-form ridge solve; rows within one
//! half-sweep depend only on the previous half-sweep's state, so the
//! objective never increases between half-sweeps.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Provenance, ReprError, TfidfConfig, VectorSet, Vocabulary};
use crate::corpus::ItemId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WtmfConfig {
    pub dim: usize,
    pub lambda: f64,
    /// Weight of unobserved (zero) cells, in (0, 1].
    pub w_missing: f64,
    pub sweeps: usize,
}

impl Default for WtmfConfig {
    fn default() -> Self {
        Self {
            dim: 50,
            lambda: 20.0,
            w_missing: 0.01,
            sweeps: 30,
        }
    }
}

/// Raw factorization output at the matrix level.
#[derive(Clone, Debug)]
pub struct Factorization {
    /// V x D term factors.
    pub p: DMatrix<f64>,
    /// N x D sentence factors.
    pub q: DMatrix<f64>,
    /// Objective after initialization and after every half-sweep
    /// (2 * sweeps + 1 entries), non-increasing.
    pub objective_trace: Vec<f64>,
}

/// Full weighted objective including both regularization terms.
pub fn wtmf_objective(
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    config: &WtmfConfig,
) -> f64 {
    let recon = p * q.transpose();
    let mut total = 0.0;
    for t in 0..x.nrows() {
        for c in 0..x.ncols() {
            let observed = x[(t, c)] != 0.0;
            let w = if observed { 1.0 } else { config.w_missing };
            let r = x[(t, c)] - recon[(t, c)];
            total += w * r * r;
        }
    }
    total + config.lambda * (p.norm_squared() + q.norm_squared())
}

/// Closed-form ridge solution of one row subproblem: minimize
/// `sum_i w_i (x_i - fixed_i . r)^2 + lambda |r|^2` over r, where `observed`
/// lists the indices with weight 1 and value x_i (all other rows of `fixed`
/// carry weight `w_missing` and target 0).
#[doc(hidden)]
pub fn ridge_row_solve(
    fixed: &DMatrix<f64>,
    observed: &[(usize, f64)],
    lambda: f64,
    w_missing: f64,
) -> DVector<f64> {
    let base = fixed.transpose() * fixed * w_missing;
    solve_with_base(&base, fixed, observed, lambda, w_missing)
        .unwrap_or_else(|| DVector::zeros(fixed.ncols()))
}

/// Same solve with the `w_missing * fixed^T fixed` Gram matrix precomputed,
/// which is what makes a half-sweep O(rows * (nnz + D^2)) instead of
/// O(rows * cols * D^2). Returns None when the system is singular, in which
/// case the caller keeps the previous row (objective unchanged).
fn solve_with_base(
    base: &DMatrix<f64>,
    fixed: &DMatrix<f64>,
    observed: &[(usize, f64)],
    lambda: f64,
    w_missing: f64,
) -> Option<DVector<f64>> {
    let d = fixed.ncols();
    let mut a = base.clone();
    let mut b = DVector::zeros(d);
    for &(idx, value) in observed {
        let row = fixed.row(idx).transpose();
        a += &row * row.transpose() * (1.0 - w_missing);
        b += row * value;
    }
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    match a.clone().cholesky() {
        Some(chol) => Some(chol.solve(&b)),
        None => a.lu().solve(&b),
    }
}

fn half_sweep(
    target: &mut DMatrix<f64>,
    fixed: &DMatrix<f64>,
    observed_of: impl Fn(usize) -> Vec<(usize, f64)>,
    config: &WtmfConfig,
) {
    let base = fixed.transpose() * fixed * config.w_missing;
    for row in 0..target.nrows() {
        let observed = observed_of(row);
        if let Some(solution) =
            solve_with_base(&base, fixed, &observed, config.lambda, config.w_missing)
        {
            target.row_mut(row).copy_from(&solution.transpose());
        }
    }
}

/// Factor a term-by-sentence matrix. P and Q start as small uniform noise
/// drawn from the seed; the objective trace records initialization plus every
/// half-sweep.
pub fn wtmf_factorize(x: &DMatrix<f64>, config: &WtmfConfig, seed: u64) -> Factorization {
    let (v, n) = x.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = DMatrix::from_fn(v, config.dim, |_, _| rng.random_range(-0.01..0.01));
    let mut q = DMatrix::from_fn(n, config.dim, |_, _| rng.random_range(-0.01..0.01));

    let mut trace = Vec::with_capacity(2 * config.sweeps + 1);
    trace.push(wtmf_objective(x, &p, &q, config));
    for _ in 0..config.sweeps {
        half_sweep(
            &mut p,
            &q,
            |t| {
                (0..n)
                    .filter(|&c| x[(t, c)] != 0.0)
                    .map(|c| (c, x[(t, c)]))
                    .collect()
            },
            config,
        );
        trace.push(wtmf_objective(x, &p, &q, config));
        half_sweep(
            &mut q,
            &p,
            |c| {
                (0..v)
                    .filter(|&t| x[(t, c)] != 0.0)
                    .map(|t| (t, x[(t, c)]))
                    .collect()
            },
            config,
        );
        trace.push(wtmf_objective(x, &p, &q, config));
    }
    Factorization {
        p,
        q,
        objective_trace: trace,
    }
}

/// Fold-in result: the sentence vector and whether the text had zero
/// in-vocabulary tokens (zero vector).
#[derive(Clone, Debug, PartialEq)]
pub struct FoldIn {
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

/// Trained factorization bound to its vocabulary and document identities.
#[derive(Clone, Debug)]
pub struct WtmfModel {
    pub vocabulary: Vocabulary,
    pub config: WtmfConfig,
    items: Vec<ItemId>,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
}

impl WtmfModel {
    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn term_factors(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Trained sentence vectors as a D-dimensional vector set.
    pub fn vectors(&self) -> VectorSet {
        let mut set = VectorSet::new(self.config.dim, Provenance::Wtmf);
        for (c, item) in self.items.iter().enumerate() {
            let row: Vec<f64> = self.q.row(c).iter().copied().collect();
            set.insert(item.clone(), row)
                .expect("trained rows are finite");
        }
        set
    }

    /// Embed new text against the trained term factors: the same ridge solve
    /// a Q row gets during training, with unseen tokens ignored.
    pub fn fold_in(&self, text: &str) -> FoldIn {
        let column = self.vocabulary.tfidf_column(text);
        let observed: Vec<(usize, f64)> = column
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        if observed.is_empty() {
            return FoldIn {
                vector: vec![0.0; self.config.dim],
                degenerate: true,
            };
        }
        let solution = ridge_row_solve(
            &self.p,
            &observed,
            self.config.lambda,
            self.config.w_missing,
        );
        FoldIn {
            vector: solution.iter().copied().collect(),
            degenerate: false,
        }
    }
}

/// Train WTMF over a document slice: TF-IDF columns form X, then
/// [`wtmf_factorize`] runs under the seed.
pub fn wtmf_train(
    docs: &BTreeMap<ItemId, String>,
    tfidf: &TfidfConfig,
    config: &WtmfConfig,
    seed: u64,
) -> Result<WtmfModel, ReprError> {
    let vocabulary = Vocabulary::build(docs.values().map(String::as_str), tfidf.min_df)?;
    if vocabulary.is_empty() {
        return Err(ReprError::EmptyVocabulary {
            min_df: tfidf.min_df,
        });
    }
    let items: Vec<ItemId> = docs.keys().cloned().collect();
    let mut x = DMatrix::zeros(vocabulary.len(), items.len());
    for (c, item) in items.iter().enumerate() {
        let column = vocabulary.tfidf_column(&docs[item]);
        for (t, value) in column.into_iter().enumerate() {
            x[(t, c)] = value;
        }
    }
    let factorization = wtmf_factorize(&x, config, seed);
    Ok(WtmfModel {
        vocabulary,
        config: *config,
        items,
        p: factorization.p,
        q: factorization.q,
        objective_trace: factorization.objective_trace,
    })
}
