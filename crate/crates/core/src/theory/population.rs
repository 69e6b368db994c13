//! Ground-truth distributions, the population loss and its minimizer, and
//! divergence utilities.

use serde::{Deserialize, Serialize};

use crate::dataset::ObservedDataset;
use crate::error::{Error, Result};

/// Joint distribution `p` over (user, item, rating) stored as `m × n × k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDistribution {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    p: Vec<f64>,
}

impl GroundTruthDistribution {
    pub fn new(m: usize, n: usize, k: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != m * n * k || p.is_empty() {
            return Err(Error::shape(
                "GroundTruthDistribution",
                format!("{} values for {m}×{n}×{k}", p.len()),
            ));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(GroundTruthDistribution { m, n, k, p })
    }

    /// `p_{i,j,κ}` with one-based `κ`.
    pub fn get(&self, i: usize, j: usize, kappa: usize) -> f64 {
        self.p[(i * self.n + j) * self.k + kappa - 1]
    }

    /// `p_{i,j} = Σ_κ p_{i,j,κ}`.
    pub fn marginal(&self, i: usize, j: usize) -> f64 {
        let base = (i * self.n + j) * self.k;
        self.p[base..base + self.k].iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn marginals(&self) -> Vec<f64> {
        self.p.chunks(self.k).map(|c| c.iter().sum()).collect()
    }

    /// At most one non-zero rating per (user, item).
    pub fn is_noiseless(&self) -> bool {
        self.p
            .chunks(self.k)
            .all(|c| c.iter().filter(|&&v| v > 0.0).count() <= 1)
    }
}

/// Probabilities for every cell, `m × n × (k+1)` row-major with channel 0
/// meaning "not observed".
pub type CellProbabilities = [f64];

/// `G_{i,j,κ} = N·p_{i,j,κ}`, `G_{i,j,0} = 1 − N·p_{i,j}`. Requires
/// `p_{i,j} ≤ 1/N` everywhere.
pub fn bayes_optimal_g(p: &GroundTruthDistribution, samples: f64) -> Result<Vec<f64>> {
    if !(samples > 0.0) {
        return Err(Error::invalid("N must be positive"));
    }
    let k1 = p.k + 1;
    let mut g = vec![0.0; p.m * p.n * k1];
    for i in 0..p.m {
        for j in 0..p.n {
            let pij = p.marginal(i, j);
            if pij * samples > 1.0 + 1e-12 {
                return Err(Error::invalid(format!(
                    "entry (user {i}, item {j}) has p = {pij} > 1/N = {}; it would be expected more than once",
                    1.0 / samples
                )));
            }
            let cell = &mut g[(i * p.n + j) * k1..(i * p.n + j + 1) * k1];
            cell[0] = (1.0 - samples * pij).max(0.0);
            for kappa in 1..=p.k {
                cell[kappa] = samples * p.get(i, j, kappa);
            }
        }
    }
    Ok(g)
}

fn check_cells(g: &CellProbabilities, m: usize, n: usize, k: usize) -> Result<()> {
    if g.len() != m * n * (k + 1) {
        return Err(Error::shape(
            "cell probabilities",
            format!("{} values for {m}×{n}×{}", g.len(), k + 1),
        ));
    }
    Ok(())
}

fn log_of(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 {
        Ok(v.ln())
    } else {
        Err(Error::invalid(format!(
            "zero probability at a needed channel ({what})"
        )))
    }
}

/// `𝓛′(G) = −Σ p_{i,j,κ} log G_{i,j,κ} − Σ (1/N − p_{i,j}) log G_{i,j,0}`.
pub fn population_loss(
    p: &GroundTruthDistribution,
    g: &CellProbabilities,
    samples: f64,
) -> Result<f64> {
    check_cells(g, p.m, p.n, p.k)?;
    let k1 = p.k + 1;
    let mut loss = 0.0;
    for i in 0..p.m {
        for j in 0..p.n {
            let cell = &g[(i * p.n + j) * k1..(i * p.n + j + 1) * k1];
            for kappa in 1..=p.k {
                let w = p.get(i, j, kappa);
                if w > 0.0 {
                    loss -= w * log_of(cell[kappa], "rating")?;
                }
            }
            let w0 = 1.0 / samples - p.marginal(i, j);
            if w0 != 0.0 {
                loss -= w0 * log_of(cell[0], "unobserved")?;
            }
        }
    }
    Ok(loss)
}

/// Sample loss `(1/N)Σ_Ω −[log G_{κ} − log G_0] − (1/N)Σ_{i,j} log G_0`,
/// with `N = |Ω|` counted with multiplicity.
pub fn implicit_loss(g: &CellProbabilities, train: &ObservedDataset, samples: f64) -> Result<f64> {
    let (m, n, k) = (train.m, train.n, train.k());
    check_cells(g, m, n, k)?;
    let k1 = k + 1;
    let mut total = 0.0;
    for t in &train.triples {
        let cell = &g[(t.user * n + t.item) * k1..(t.user * n + t.item + 1) * k1];
        total -= log_of(cell[t.rating], "rating")? - log_of(cell[0], "unobserved")?;
    }
    for cell in g.chunks(k1) {
        total -= log_of(cell[0], "unobserved")?;
    }
    Ok(total / samples)
}

fn same_support(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::shape(
            "divergence",
            format!("supports of size {} and {}", p.len(), q.len()),
        ));
    }
    Ok(())
}

/// `KL(p‖q) = Σ p log(p/q)`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    same_support(p, q)?;
    let mut kl = 0.0;
    for (idx, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if !(b > 0.0) {
                return Err(Error::invalid(format!(
                    "q vanishes at index {idx} where p = {a}"
                )));
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Total variation measured as the L1 distance `Σ|p − q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    same_support(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// Pinsker for the L1 distance: `‖p − q‖₁ ≤ √(2·KL)`.
pub fn pinsker_l1_bound(kl: f64) -> f64 {
    (2.0 * kl).sqrt()
}

/// `√(KL/2)`: the classical bound on `sup_A |p(A) − q(A)|`, i.e. half the
/// L1 distance.
pub fn pinsker_half_l1_bound(kl: f64) -> f64 {
    (kl / 2.0).sqrt()
}

/// `p̂ = Ĝ_{·,·,κ≥1} / Σ Ĝ_{·,·,κ≥1}` as an `m × n × k` vector.
pub fn normalize_rating_channels(g: &CellProbabilities, k: usize) -> Result<Vec<f64>> {
    let k1 = k + 1;
    if g.len() % k1 != 0 {
        return Err(Error::shape(
            "normalize",
            format!("{} values for k+1 = {k1}", g.len()),
        ));
    }
    let mut out: Vec<f64> = g.chunks(k1).flat_map(|c| c[1..].iter().copied()).collect();
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("no probability mass on rating channels"));
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{RatingScale, Triple};

    #[test]
    fn bayes_uniform_example() {
        let p = GroundTruthDistribution::new(2, 2, 1, vec![0.25; 4]).unwrap();
        let g = bayes_optimal_g(&p, 2.0).unwrap();
        assert!(g.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let err = bayes_optimal_g(&p, 10.0).unwrap_err().to_string();
        assert!(err.contains("user 0, item 0"), "{err}");
    }

    #[test]
    fn divergence_closed_forms() {
        let p = [1.0, 0.0];
        let q = [0.5, 0.5];
        assert!((kl_divergence(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(tv_distance(&p, &q).unwrap(), 1.0);
        assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
        assert!(kl_divergence(&q, &p).is_err());
        // the L1 form holds, the half-L1 form does not bound L1 here
        assert!(1.0 <= pinsker_l1_bound(2f64.ln()));
        assert!(1.0 > pinsker_half_l1_bound(2f64.ln()));
    }

    #[test]
    fn uniform_g_on_empty_data() {
        let (m, n, k) = (2, 3, 4);
        let g = vec![1.0 / (k + 1) as f64; m * n * (k + 1)];
        let data =
            ObservedDataset::from_triples(m, n, RatingScale::integer(k).unwrap(), vec![]).unwrap();
        let v = implicit_loss(&g, &data, 7.0).unwrap();
        assert!((v - (m * n) as f64 / 7.0 * ((k + 1) as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn implicit_matches_population_on_exact_frequencies() {
        // every nonzero p equals 1/N, so the dataset's empirical frequencies are p
        let (m, n, k) = (2, 2, 2);
        let mut p = vec![0.0; m * n * k];
        let cells = [(0, 0, 1), (0, 1, 2), (1, 1, 1), (1, 0, 2)];
        for &(i, j, kappa) in &cells {
            p[(i * n + j) * k + kappa - 1] = 0.25;
        }
        let truth = GroundTruthDistribution::new(m, n, k, p).unwrap();
        let g = bayes_optimal_g(&truth, 4.0).unwrap();
        // G₀ = 0 on observed cells here, so lift N slightly
        let g = {
            let mut g2 = g.clone();
            for c in g2.chunks_mut(3) {
                c[0] += 1e-3;
                let s: f64 = c.iter().sum();
                c.iter_mut().for_each(|v| *v /= s);
            }
            g2
        };
        let triples = cells
            .iter()
            .map(|&(user, item, rating)| Triple { user, item, rating })
            .collect();
        let data =
            ObservedDataset::from_triples(m, n, RatingScale::integer(k).unwrap(), triples).unwrap();
        let a = implicit_loss(&g, &data, 4.0).unwrap();
        let b = population_loss(&truth, &g, 4.0).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn rating_channel_normalization() {
        let g = [0.5, 0.25, 0.25, 0.9, 0.1, 0.0];
        let p = normalize_rating_channels(&g, 2).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.25 / 0.6).abs() < 1e-15);
    }
}
