//! Synthetic ground truth produced by a random decoder, i.i.d. sampling from
//! it, and the recovery experiment measuring how well a trained model's
//! normalized output approaches the truth as `N` grows.

use serde::{Deserialize, Serialize};

use super::bounds::{tv_bound_report, BoundInputs, TvBoundReport};
use super::lipschitz::decode_with;
use super::norms::distance_to_init;
use super::population::{
    kl_divergence, normalize_rating_channels, tv_distance, GroundTruthDistribution,
};
use crate::dataset::{ObservedDataset, RatingScale, Triple};
use crate::error::{Error, Result};
use crate::model::{
    conditional_from_probabilities, encode_batch, expected_rating, forward_batch, DecoderSpec,
    ModelParams,
};
use crate::numerics::{norm2, softmax_in_place, Matrix, Rng};
use crate::training::{train, TrainConfig, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    /// Rank of the generating embeddings.
    pub r_true: usize,
    pub k: usize,
    /// Hidden width of the generating two-layer decoder.
    pub width: usize,
    /// Standard deviation of the embeddings.
    pub embed_scale: f64,
    /// Multiplier on `1/√fan-in` weight draws.
    pub weight_scale: f64,
    /// Keep only the most likely rating of each cell.
    pub noiseless: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            m: 50,
            n: 80,
            r_true: 2,
            k: 5,
            width: 8,
            embed_scale: 1.0,
            weight_scale: 2.0,
            noiseless: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub config: SynthConfig,
    pub p: GroundTruthDistribution,
    pub scale: RatingScale,
}

/// Builds `p_{i,j,κ} ∝ G_{i,j,κ}` (κ ≥ 1) where `G = softmax(g(z_i))` for a
/// random decoder `g` and random embeddings `z_i`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SyntheticTruth> {
    if cfg.m == 0 || cfg.n == 0 || cfg.r_true == 0 || cfg.k < 2 || cfg.width == 0 {
        return Err(Error::invalid(
            "synthetic dimensions must be positive and k ≥ 2",
        ));
    }
    let spec = DecoderSpec::standard(cfg.n, cfg.k, cfg.r_true, 2, cfg.width)?;
    let mut rng = Rng::new(cfg.seed);
    let weights: Vec<Matrix> = spec
        .layers
        .iter()
        .map(|l| {
            let (rows, cols) = l.weight_shape();
            let sd = cfg.weight_scale / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| sd * rng.normal())
        })
        .collect();
    let k1 = cfg.k + 1;
    let mut p = Vec::with_capacity(cfg.m * cfg.n * cfg.k);
    for _ in 0..cfg.m {
        let z: Vec<f64> = (0..cfg.r_true)
            .map(|_| cfg.embed_scale * rng.normal())
            .collect();
        let mut g = decode_with(&spec, &weights, &z)?;
        for cell in g.chunks_mut(k1) {
            softmax_in_place(cell);
            let ratings = &mut cell[1..];
            if cfg.noiseless {
                let best = (0..cfg.k)
                    .max_by(|&a, &b| ratings[a].total_cmp(&ratings[b]).then(b.cmp(&a)))
                    .expect("k ≥ 2");
                let mass: f64 = ratings.iter().sum();
                ratings.iter_mut().for_each(|v| *v = 0.0);
                ratings[best] = mass;
            }
            p.extend_from_slice(ratings);
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(SyntheticTruth {
        config: cfg.clone(),
        p: GroundTruthDistribution::new(cfg.m, cfg.n, cfg.k, p)?,
        scale: RatingScale::integer(cfg.k)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Redraw any (user, item) already sampled; requires `N ≤ mn`.
    DuplicateFree,
    /// Plain i.i.d. draws; repeated cells become counts.
    WithReplacement,
}

/// Draws `samples` triples `(user, item, rating)` from `p`.
pub fn sample_triples(
    p: &GroundTruthDistribution,
    samples: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<Vec<(usize, usize, usize)>> {
    let cells = p.m * p.n;
    if mode == SamplingMode::DuplicateFree && samples > cells {
        return Err(Error::invalid(format!(
            "cannot draw {samples} distinct entries from {cells} cells; use with-replacement sampling"
        )));
    }
    let mut cdf = Vec::with_capacity(p.as_slice().len());
    let mut acc = 0.0;
    for &v in p.as_slice() {
        acc += v;
        cdf.push(acc);
    }
    let support = p.as_slice().iter().filter(|&&v| v > 0.0).count();
    let support_cells = p.marginals().iter().filter(|&&v| v > 0.0).count();
    if mode == SamplingMode::DuplicateFree && samples > support_cells {
        return Err(Error::invalid(format!(
            "only {support_cells} cells have positive probability; cannot draw {samples} distinct"
        )));
    }
    debug_assert!(support > 0);
    let mut rng = Rng::new(seed);
    let mut seen = vec![false; cells];
    let mut out = Vec::with_capacity(samples);
    while out.len() < samples {
        let u = rng.uniform() * acc;
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        if p.as_slice()[idx] == 0.0 {
            continue;
        }
        let cell = idx / p.k;
        if mode == SamplingMode::DuplicateFree {
            if seen[cell] {
                continue;
            }
            seen[cell] = true;
        }
        out.push((cell / p.n, cell % p.n, idx % p.k + 1));
    }
    Ok(out)
}

/// Duplicate-free draws as a dataset.
pub fn sample_dataset(
    truth: &SyntheticTruth,
    samples: usize,
    seed: u64,
) -> Result<ObservedDataset> {
    let triples = sample_triples(&truth.p, samples, SamplingMode::DuplicateFree, seed)?
        .into_iter()
        .map(|(user, item, rating)| Triple { user, item, rating })
        .collect();
    ObservedDataset::from_triples(truth.p.m, truth.p.n, truth.scale.clone(), triples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvExperimentConfig {
    pub synth: SynthConfig,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mode: SamplingMode,
    pub train: TrainConfig,
    /// Confidence for the reported `𝒬`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvRow {
    pub seed: u64,
    pub samples: usize,
    /// `‖p − p̂‖₁` over (user, item, rating).
    pub tv: Option<f64>,
    /// `‖p_{·,·} − p̂_{·,·}‖₁` over (user, item).
    pub tv_marginal: Option<f64>,
    pub kl: Option<f64>,
    /// `Σ p_{i,j,κ}(F_{i,j} − u_κ)²`.
    pub population_mse: Option<f64>,
    /// `𝒬` from measured norms, up to the theorem's constants.
    pub bound: Option<TvBoundReport>,
    /// Training failure, if any.
    pub error: Option<String>,
}

/// Normalized model output `p̂` and its distances to the truth.
fn score(
    truth: &GroundTruthDistribution,
    g: &[f64],
    scale: &RatingScale,
) -> Result<(f64, f64, f64, f64)> {
    let k = truth.k;
    let p_hat = normalize_rating_channels(g, k)?;
    let tv = tv_distance(truth.as_slice(), &p_hat)?;
    let marg_hat: Vec<f64> = p_hat.chunks(k).map(|c| c.iter().sum()).collect();
    let tv_marginal = tv_distance(&truth.marginals(), &marg_hat)?;
    let kl = kl_divergence(truth.as_slice(), &p_hat)?;
    let mut mse = 0.0;
    for (pc, gc) in truth.as_slice().chunks(k).zip(g.chunks(k + 1)) {
        let f = expected_rating(&conditional_from_probabilities(gc), scale);
        for (kappa, &w) in pc.iter().enumerate() {
            mse += w * (f - scale.value(kappa + 1)).powi(2);
        }
    }
    Ok((tv, tv_marginal, kl, mse))
}

/// Bound inputs measured from a trained model: `β`, `ν`, `a`, `s` from the
/// decoder's drift, `χ` as the largest embedding norm over `inputs`, `B` as
/// the largest score magnitude.
pub fn measured_bound_inputs(
    params: &ModelParams,
    inputs: &TrainingSet,
    samples: f64,
    delta: f64,
    scale: &RatingScale,
) -> Result<BoundInputs> {
    let dist = distance_to_init(params)?;
    let users: Vec<usize> = (0..inputs.m).collect();
    let mut score_cap: f64 = 0.0;
    let mut chi: f64 = 0.0;
    for chunk in users.chunks(64) {
        let input = inputs.input_batch(chunk);
        let trace = forward_batch(params, &input)?;
        score_cap = score_cap.max(trace.scores().max_abs());
        let z = encode_batch(params, &input)?;
        for b in 0..z.rows() {
            chi = chi.max(norm2(z.row(b)));
        }
    }
    Ok(BoundInputs {
        beta: dist.beta,
        nu: dist.nu,
        chi: chi.max(f64::MIN_POSITIVE),
        a: dist.a,
        s: dist.s,
        delta,
        samples,
        m: inputs.m,
        n: inputs.n,
        r: params.spec.r(),
        d2: params.spec.d2(),
        depth: params.spec.decoder.depth(),
        delta_u: scale.span(),
        score_cap: score_cap.max(f64::MIN_POSITIVE),
    })
}

fn measured_bound(
    params: &ModelParams,
    inputs: &TrainingSet,
    samples: usize,
    delta: f64,
    scale: &RatingScale,
) -> Result<TvBoundReport> {
    tv_bound_report(&measured_bound_inputs(
        params,
        inputs,
        samples as f64,
        delta,
        scale,
    )?)
}

/// One trained model per (seed, N). Training failures are recorded in the
/// row and the experiment moves on.
pub fn tv_recovery_experiment(cfg: &TvExperimentConfig) -> Result<Vec<TvRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let truth = synth_generate(&SynthConfig {
            seed: cfg.synth.seed.wrapping_add(seed),
            ..cfg.synth.clone()
        })?;
        for &samples in &cfg.sample_sizes {
            let triples = sample_triples(
                &truth.p,
                samples,
                cfg.mode,
                seed.wrapping_mul(1_000_003).wrapping_add(samples as u64),
            )?;
            let inputs = TrainingSet::from_triples(truth.p.m, truth.p.n, truth.p.k, triples)?;
            let train_cfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let outcome = train(&train_cfg, &inputs, &truth.scale, None).and_then(|state| {
                let preds = state.averaged_predictions(&inputs, &truth.scale)?;
                let metrics = score(&truth.p, preds.probabilities().as_slice(), &truth.scale)?;
                let bound =
                    measured_bound(&state.params, &inputs, samples, cfg.delta, &truth.scale)?;
                Ok((metrics, bound))
            });
            rows.push(match outcome {
                Ok(((tv, tv_marginal, kl, mse), bound)) => TvRow {
                    seed,
                    samples,
                    tv: Some(tv),
                    tv_marginal: Some(tv_marginal),
                    kl: Some(kl),
                    population_mse: Some(mse),
                    bound: Some(bound),
                    error: None,
                },
                Err(e) => TvRow {
                    seed,
                    samples,
                    tv: None,
                    tv_marginal: None,
                    kl: None,
                    population_mse: None,
                    bound: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    Ok(rows)
}

/// Mean TV per sample size over the rows that succeeded.
pub fn mean_tv_by_size(rows: &[TvRow]) -> Vec<(usize, f64)> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.samples).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .filter_map(|n| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.samples == n)
                .filter_map(|r| r.tv)
                .collect();
            (!v.is_empty()).then(|| (n, v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect()
}

/// Tab-separated table with a commented echo of the configuration.
pub fn tv_table(cfg: &TvExperimentConfig, rows: &[TvRow]) -> String {
    let mut out = format!(
        "# config={}\n",
        serde_json::to_string(cfg).unwrap_or_default()
    );
    out.push_str("# q is reported up to the theorem's constants; tv_l1_bound = sqrt(2q), tv_bound_as_stated = sqrt(q/2)\n");
    out.push_str(
        "seed\tN\ttv\ttv_marginal\tkl\tpopulation_mse\tq\ttv_l1_bound\ttv_bound_as_stated\terror\n",
    );
    let f = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.8}"));
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.seed,
            r.samples,
            f(r.tv),
            f(r.tv_marginal),
            f(r.kl),
            f(r.population_mse),
            f(r.bound.as_ref().map(|b| b.q)),
            f(r.bound.as_ref().map(|b| b.tv_l1)),
            f(r.bound.as_ref().map(|b| b.tv_as_stated)),
            r.error.as_deref().unwrap_or("")
        ));
    }
    out
}
