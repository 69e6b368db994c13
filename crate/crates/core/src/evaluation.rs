//! RMSE, Recall@K, λ-blended ranking and serendipity reports.
//!
//! All metrics read a [`Predictions`] tensor — the (possibly
//! checkpoint-averaged) probabilities `G` for every user and item — so they
//! never depend on how those probabilities were produced.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ObservedDataset, RatingScale};
use crate::error::{Error, Result};
use crate::model::{
    conditional_from_probabilities, expected_rating, forward_batch, ForwardOutput, ModelParams,
};
use crate::numerics::{softmax_in_place, Matrix};
use crate::training::TrainingSet;

const BATCH: usize = 64;

/// Probabilities `G` for all `m` users, stored as `m × n(k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub n: usize,
    pub scale: RatingScale,
    probs: Matrix,
}

impl Predictions {
    pub fn from_probabilities(n: usize, scale: RatingScale, probs: Matrix) -> Result<Self> {
        if probs.cols() != n * (scale.k() + 1) {
            return Err(Error::shape(
                "Predictions",
                format!("{} columns for n = {n}, k = {}", probs.cols(), scale.k()),
            ));
        }
        Ok(Predictions { n, scale, probs })
    }

    /// Averages `G` over the given parameter snapshots, feeding every user's
    /// training slice as input.
    pub fn from_checkpoints(
        checkpoints: &[&ModelParams],
        inputs: &TrainingSet,
        scale: &RatingScale,
    ) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::invalid(
                "averaged prediction needs at least one checkpoint",
            ));
        }
        let (m, n, k) = (inputs.m, inputs.n, inputs.k);
        if scale.k() != k {
            return Err(Error::invalid(format!(
                "scale has k = {}, data k = {k}",
                scale.k()
            )));
        }
        let width = n * (k + 1);
        let mut probs = Matrix::zeros(m, width);
        let users: Vec<usize> = (0..m).collect();
        for chunk in users.chunks(BATCH) {
            let input = inputs.input_batch(chunk);
            let mut acc = vec![0.0; chunk.len() * width];
            for params in checkpoints {
                let trace = forward_batch(params, &input)?;
                let mut g = trace.scores().as_slice().to_vec();
                for cell in g.chunks_mut(k + 1) {
                    softmax_in_place(cell);
                }
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
            let inv = 1.0 / checkpoints.len() as f64;
            for (b, &u) in chunk.iter().enumerate() {
                let row = probs.row_mut(u);
                for (dst, src) in row.iter_mut().zip(&acc[b * width..(b + 1) * width]) {
                    *dst = src * inv;
                }
            }
        }
        Ok(Predictions {
            n,
            scale: scale.clone(),
            probs,
        })
    }

    pub fn m(&self) -> usize {
        self.probs.rows()
    }

    pub fn k(&self) -> usize {
        self.scale.k()
    }

    /// `G_{i,j,·}`.
    pub fn cell(&self, user: usize, item: usize) -> &[f64] {
        let k1 = self.k() + 1;
        &self.probs.row(user)[item * k1..(item + 1) * k1]
    }

    /// `1 − G_{i,j,0}`.
    pub fn interaction(&self, user: usize, item: usize) -> f64 {
        1.0 - self.cell(user, item)[0]
    }

    /// `F_{i,j}`.
    pub fn prediction(&self, user: usize, item: usize) -> f64 {
        expected_rating(
            &conditional_from_probabilities(self.cell(user, item)),
            &self.scale,
        )
    }

    pub fn output(&self, user: usize) -> Result<ForwardOutput> {
        let g = Matrix::from_vec(self.n, self.k() + 1, self.probs.row(user).to_vec())?;
        ForwardOutput::from_probabilities(g, &self.scale)
    }

    pub fn probabilities(&self) -> &Matrix {
        &self.probs
    }
}

/// Items that may not be recommended to each user (their training items,
/// optionally more), plus which users are cold (no training items).
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusions {
    per_user: Vec<Vec<usize>>,
    cold: Vec<bool>,
}

impl Exclusions {
    pub fn new(train: &ObservedDataset) -> Self {
        let per_user: Vec<Vec<usize>> = train
            .by_user()
            .into_iter()
            .map(|row| row.into_iter().map(|(j, _)| j).collect())
            .collect();
        let cold = per_user.iter().map(Vec::is_empty).collect();
        Exclusions { per_user, cold }
    }

    pub fn from_training_set(inputs: &TrainingSet) -> Self {
        let per_user: Vec<Vec<usize>> = (0..inputs.m).map(|u| inputs.items(u)).collect();
        let cold = per_user.iter().map(Vec::is_empty).collect();
        Exclusions { per_user, cold }
    }

    /// Also excludes `extra`'s items (e.g. validation items during tuning).
    pub fn with(mut self, extra: &ObservedDataset) -> Self {
        for t in &extra.triples {
            self.per_user[t.user].push(t.item);
        }
        for row in &mut self.per_user {
            row.sort_unstable();
            row.dedup();
        }
        self
    }

    pub fn is_excluded(&self, user: usize, item: usize) -> bool {
        self.per_user[user].binary_search(&item).is_ok()
    }

    pub fn is_cold(&self, user: usize) -> bool {
        self.cold[user]
    }

    fn candidates(&self, user: usize, n: usize) -> Vec<usize> {
        (0..n).filter(|&j| !self.is_excluded(user, j)).collect()
    }
}

/// Descending by score, ties to the smaller item index.
fn by_score_desc(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// The `k` best candidates in rank order.
fn top_k(scores: &[f64], mut candidates: Vec<usize>, k: usize) -> Vec<usize> {
    let cmp = by_score_desc(scores);
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, &cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(&cmp);
    candidates
}

fn recall_of(ranked_top: &[usize], relevant: &[usize], k: usize) -> f64 {
    let hits = ranked_top
        .iter()
        .filter(|j| relevant.binary_search(j).is_ok())
        .count();
    hits as f64 / k.min(relevant.len()) as f64
}

/// `√(mean (u_κ − F_{i,j})²)` over the triples of `test`.
pub fn rmse(preds: &Predictions, test: &ObservedDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("RMSE needs a non-empty test set"));
    }
    let sse: f64 = test
        .triples
        .iter()
        .map(|t| (test.scale.value(t.rating) - preds.prediction(t.user, t.item)).powi(2))
        .sum();
    Ok((sse / test.len() as f64).sqrt())
}

/// Per-user recall for a score function; users without test items (and,
/// optionally, cold users) are skipped.
fn recall_with(
    preds: &Predictions,
    excl: &Exclusions,
    test: &ObservedDataset,
    k: usize,
    skip_cold: bool,
    mut score: impl FnMut(usize, usize) -> f64,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("recall cut-off K must be at least 1"));
    }
    let relevant = test.by_user();
    let mut total = 0.0;
    let mut users = 0usize;
    for (u, rel) in relevant.iter().enumerate() {
        if rel.is_empty() || (skip_cold && excl.is_cold(u)) {
            continue;
        }
        let items: Vec<usize> = rel.iter().map(|&(j, _)| j).collect();
        let scores: Vec<f64> = (0..preds.n).map(|j| score(u, j)).collect();
        let top = top_k(&scores, excl.candidates(u, preds.n), k);
        total += recall_of(&top, &items, k);
        users += 1;
    }
    if users == 0 {
        return Err(Error::invalid(
            "no user qualifies for recall (no test interactions)",
        ));
    }
    Ok(total / users as f64)
}

/// Mean Recall@K ranking unexcluded items by `1 − G₀`.
pub fn recall_at_k(
    preds: &Predictions,
    excl: &Exclusions,
    test: &ObservedDataset,
    k: usize,
    skip_cold: bool,
) -> Result<f64> {
    recall_with(preds, excl, test, k, skip_cold, |u, j| {
        preds.interaction(u, j)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub recall: BTreeMap<usize, f64>,
    /// Whether the headline numbers leave out users with no training entries.
    pub skip_cold: bool,
    /// The same metrics under the other cold-user treatment; `None` where no
    /// test entry qualifies.
    pub alternate: AlternateMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternateMetrics {
    pub rmse: Option<f64>,
    pub recall: BTreeMap<usize, Option<f64>>,
}

fn warm_only(test: &ObservedDataset, excl: &Exclusions) -> ObservedDataset {
    test.with_triples(
        test.triples
            .iter()
            .copied()
            .filter(|t| !excl.is_cold(t.user))
            .collect(),
    )
}

pub fn metric_report(
    preds: &Predictions,
    excl: &Exclusions,
    test: &ObservedDataset,
    ks: &[usize],
    skip_cold: bool,
) -> Result<MetricReport> {
    let warm = warm_only(test, excl);
    let (main, other) = if skip_cold {
        (&warm, test)
    } else {
        (test, &warm)
    };
    let mut recall = BTreeMap::new();
    let mut alt_recall = BTreeMap::new();
    for &k in ks {
        recall.insert(k, recall_at_k(preds, excl, main, k, false)?);
        alt_recall.insert(k, recall_at_k(preds, excl, other, k, false).ok());
    }
    Ok(MetricReport {
        rmse: rmse(preds, main)?,
        recall,
        skip_cold,
        alternate: AlternateMetrics {
            rmse: rmse(preds, other).ok(),
            recall: alt_recall,
        },
    })
}

/// `𝓘 + λ·(F − u₁)/Δu`.
pub fn blended_score(preds: &Predictions, user: usize, item: usize, lambda: f64) -> f64 {
    let e = (preds.prediction(user, item) - preds.scale.min()) / preds.scale.span();
    preds.interaction(user, item) + lambda * e
}

/// Unexcluded items ordered by the λ-blended score.
pub fn rank_with_lambda(
    preds: &Predictions,
    excl: &Exclusions,
    user: usize,
    lambda: f64,
) -> Result<Vec<usize>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "λ must be non-negative, got {lambda}"
        )));
    }
    let scores: Vec<f64> = (0..preds.n)
        .map(|j| blended_score(preds, user, j, lambda))
        .collect();
    let candidates = excl.candidates(user, preds.n);
    let len = candidates.len();
    Ok(top_k(&scores, candidates, len))
}

/// `0` followed by 99 values spaced geometrically from `10⁻³` to `10³`.
pub fn lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((0..99).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 98.0)));
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    /// `(user, chosen λ)` for every user with validation items.
    pub per_user: Vec<(usize, f64)>,
    /// `(λ, number of users choosing it)` over the whole grid.
    pub density: Vec<(f64, usize)>,
}

/// Picks, per user, the grid λ maximizing validation Recall@50 (ties go to
/// the smallest λ).
pub fn tune_lambda_per_user(
    preds: &Predictions,
    excl: &Exclusions,
    validation: &ObservedDataset,
) -> Result<LambdaReport> {
    const CUTOFF: usize = 50;
    let grid = lambda_grid();
    let mut counts = vec![0usize; grid.len()];
    let mut per_user = Vec::new();
    for (u, rel) in validation.by_user().iter().enumerate() {
        if rel.is_empty() {
            continue;
        }
        let items: Vec<usize> = rel.iter().map(|&(j, _)| j).collect();
        let implicit: Vec<f64> = (0..preds.n).map(|j| preds.interaction(u, j)).collect();
        let explicit: Vec<f64> = (0..preds.n)
            .map(|j| (preds.prediction(u, j) - preds.scale.min()) / preds.scale.span())
            .collect();
        let candidates = excl.candidates(u, preds.n);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (g, &lambda) in grid.iter().enumerate() {
            let scores: Vec<f64> = implicit
                .iter()
                .zip(&explicit)
                .map(|(i, e)| i + lambda * e)
                .collect();
            let top = top_k(&scores, candidates.clone(), CUTOFF);
            let r = recall_of(&top, &items, CUTOFF);
            if r > best.0 {
                best = (r, g);
            }
        }
        counts[best.1] += 1;
        per_user.push((u, grid[best.1]));
    }
    Ok(LambdaReport {
        per_user,
        density: grid.into_iter().zip(counts).collect(),
    })
}

/// Linear-interpolation quantile of `values` at `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerendipityReport {
    pub user: usize,
    pub percentile: f64,
    /// Interaction-probability cut-off (the user's quantile).
    pub threshold: f64,
    /// `(item, interaction probability, predicted rating)`, best rating first.
    pub items: Vec<(usize, f64, f64)>,
}

/// Items the user is unlikely to consume (interaction probability at or
/// below the `percentile` quantile of their unexcluded items), ranked by
/// predicted rating.
pub fn serendipity_report(
    preds: &Predictions,
    excl: &Exclusions,
    user: usize,
    percentile: f64,
) -> Result<SerendipityReport> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::invalid(format!(
            "percentile must lie in (0, 1), got {percentile}"
        )));
    }
    if user >= preds.m() {
        return Err(Error::invalid(format!("user index {user} out of range")));
    }
    let candidates = excl.candidates(user, preds.n);
    if candidates.is_empty() {
        return Ok(SerendipityReport {
            user,
            percentile,
            threshold: f64::NAN,
            items: Vec::new(),
        });
    }
    let inter: Vec<f64> = candidates
        .iter()
        .map(|&j| preds.interaction(user, j))
        .collect();
    let threshold = quantile(&inter, percentile);
    let pred: Vec<f64> = (0..preds.n).map(|j| preds.prediction(user, j)).collect();
    let pool: Vec<usize> = candidates
        .into_iter()
        .filter(|&j| preds.interaction(user, j) <= threshold)
        .collect();
    let len = pool.len();
    let items = top_k(&pred, pool, len)
        .into_iter()
        .map(|j| (j, preds.interaction(user, j), pred[j]))
        .collect();
    Ok(SerendipityReport {
        user,
        percentile,
        threshold,
        items,
    })
}

/// Everything the model says about one (user, item) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub user: usize,
    pub item: usize,
    /// `G_{i,j,0..k}`.
    pub probabilities: Vec<f64>,
    /// `G̃_{i,j,1..k}`.
    pub conditional: Vec<f64>,
    pub prediction: f64,
    pub interaction: f64,
    /// Fraction of the user's items with interaction probability ≤ this one.
    pub interaction_quantile: f64,
    pub user_median_interaction: f64,
    pub user_median_prediction: f64,
    /// Unlikely to be consumed yet likely to be enjoyed: interaction
    /// probability below the user's median and rating above it.
    pub serendipitous: bool,
}

pub fn explain(preds: &Predictions, user: usize, item: usize) -> Result<PredictionRecord> {
    if user >= preds.m() || item >= preds.n {
        return Err(Error::invalid(format!(
            "(user {user}, item {item}) outside m = {}, n = {}",
            preds.m(),
            preds.n
        )));
    }
    let g = preds.cell(user, item).to_vec();
    let conditional = conditional_from_probabilities(&g);
    let prediction = expected_rating(&conditional, &preds.scale);
    let interaction = 1.0 - g[0];
    let all_inter: Vec<f64> = (0..preds.n).map(|j| preds.interaction(user, j)).collect();
    let all_pred: Vec<f64> = (0..preds.n).map(|j| preds.prediction(user, j)).collect();
    let below = all_inter.iter().filter(|&&v| v <= interaction).count();
    let med_i = quantile(&all_inter, 0.5);
    let med_f = quantile(&all_pred, 0.5);
    Ok(PredictionRecord {
        user,
        item,
        probabilities: g,
        conditional,
        prediction,
        interaction,
        interaction_quantile: below as f64 / preds.n as f64,
        user_median_interaction: med_i,
        user_median_prediction: med_f,
        serendipitous: interaction < med_i && prediction > med_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Triple;

    /// One user; each item's `G` row is given as (interaction, rating probs).
    fn preds_from_cells(cells: &[Vec<f64>], k: usize) -> Predictions {
        let row: Vec<f64> = cells.iter().flatten().copied().collect();
        let n = cells.len();
        Predictions::from_probabilities(
            n,
            RatingScale::integer(k).unwrap(),
            Matrix::from_vec(1, row.len(), row).unwrap(),
        )
        .unwrap()
    }

    fn data(n: usize, k: usize, triples: &[(usize, usize)]) -> ObservedDataset {
        ObservedDataset::from_triples(
            1,
            n,
            RatingScale::integer(k).unwrap(),
            triples
                .iter()
                .map(|&(item, rating)| Triple {
                    user: 0,
                    item,
                    rating,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_predictor_rmse() {
        // uniform conditional over {1..5} gives F = 3
        let cells = vec![vec![0.5, 0.1, 0.1, 0.1, 0.1, 0.1]; 2];
        let p = preds_from_cells(&cells, 5);
        let test = data(2, 5, &[(0, 1), (1, 5)]);
        assert!((rmse(&p, &test).unwrap() - 2.0).abs() < 1e-12);
        assert!(rmse(&p, &data(2, 5, &[])).is_err());
    }

    #[test]
    fn recall_toy() {
        // interaction probabilities 0.9, 0.8, 0.7, 0.6, 0.5 for items 0..5
        let cells: Vec<Vec<f64>> = (0..5)
            .map(|j| {
                let i = 0.9 - 0.1 * j as f64;
                vec![1.0 - i, i / 2.0, i / 2.0]
            })
            .collect();
        let p = preds_from_cells(&cells, 2);
        let excl = Exclusions::new(&data(5, 2, &[]));
        let test = data(5, 2, &[(1, 1), (3, 2)]);
        assert_eq!(recall_at_k(&p, &excl, &test, 2, false).unwrap(), 0.5);
        let single = data(5, 2, &[(0, 1)]);
        assert_eq!(recall_at_k(&p, &excl, &single, 1, false).unwrap(), 1.0);
        assert!(recall_at_k(&p, &excl, &data(5, 2, &[]), 2, false).is_err());
    }

    #[test]
    fn lambda_crossover() {
        // item a: I = 0.8, normalized E = 0.25; item b: I = 0.3, E = 1.0
        let a = vec![0.2, 0.0, 0.8, 0.0, 0.0, 0.0];
        let b = vec![0.7, 0.0, 0.0, 0.0, 0.0, 0.3];
        let p = preds_from_cells(&[a, b], 5);
        let excl = Exclusions::new(&data(2, 5, &[]));
        assert_eq!(rank_with_lambda(&p, &excl, 0, 0.6).unwrap(), vec![0, 1]);
        assert_eq!(rank_with_lambda(&p, &excl, 0, 0.7).unwrap(), vec![1, 0]);
    }

    #[test]
    fn grid_contract() {
        let g = lambda_grid();
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.0);
        assert!((g[99] - 1e3).abs() < 1e-9);
        assert!((g[1] - 1e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 1.0), 3.0);
    }
}
