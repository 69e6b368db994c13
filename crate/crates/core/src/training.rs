//! Reconstruction loss, Nadam training with block-wise early stopping, and
//! checkpoint averaging.
//!
//! Inputs are frequency-encoded: a cell observed `c` times with rating `κ`
//! contributes `c / mass` to channel `κ`, where `mass = max(1, max c)`, and
//! channel 0 holds the rest. For a duplicate-free dataset this is exactly the
//! one-hot grid. The per-cell targets are `mass ×` the input, so the loss is
//! the reconstruction cross-entropy, count-weighted when cells repeat.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{ObservedDataset, RatingScale};
use crate::error::{Error, Result};
use crate::evaluation::{recall_at_k, rmse, Exclusions, Predictions};
use crate::model::{
    backward_batch, forward_batch, init_params, Architecture, Gradients, ModelParams, ModelSpec,
};
use crate::numerics::{softmax_in_place, Matrix, NadamConfig, NadamState, Rng};

/// Floor applied inside `log` so a vanishing probability stays finite.
pub const LOG_FLOOR: f64 = 1e-30;

/// Observed cell counts per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// Per user, sorted `(item, rating index, count)`.
    rows: Vec<Vec<(usize, usize, f64)>>,
    /// `max(1, largest per-cell count)`.
    pub cell_mass: f64,
}

impl TrainingSet {
    /// Builds from triples, accumulating repeats of the same
    /// (user, item, rating) into counts.
    pub fn from_triples(
        m: usize,
        n: usize,
        k: usize,
        triples: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); m];
        for (u, j, kappa) in triples {
            if u >= m || j >= n || kappa == 0 || kappa > k {
                return Err(Error::invalid(format!(
                    "entry (user {u}, item {j}, rating {kappa}) outside m = {m}, n = {n}, k = {k}"
                )));
            }
            rows[u].push((j, kappa, 1.0));
        }
        let mut mass: f64 = 1.0;
        for row in &mut rows {
            row.sort_by_key(|&(j, kappa, _)| (j, kappa));
            let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(row.len());
            for &(j, kappa, c) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j && last.1 == kappa => last.2 += c,
                    _ => merged.push((j, kappa, c)),
                }
            }
            let mut idx = 0;
            while idx < merged.len() {
                let j = merged[idx].0;
                let mut cell = 0.0;
                while idx < merged.len() && merged[idx].0 == j {
                    cell += merged[idx].2;
                    idx += 1;
                }
                mass = mass.max(cell);
            }
            *row = merged;
        }
        Ok(TrainingSet {
            m,
            n,
            k,
            rows,
            cell_mass: mass,
        })
    }

    pub fn from_dataset(data: &ObservedDataset) -> Result<Self> {
        Self::from_triples(
            data.m,
            data.n,
            data.k(),
            data.triples.iter().map(|t| (t.user, t.item, t.rating)),
        )
    }

    /// Distinct items the user has interacted with.
    pub fn items(&self, user: usize) -> Vec<usize> {
        let mut items: Vec<usize> = self.rows[user].iter().map(|e| e.0).collect();
        items.dedup();
        items
    }

    pub fn entries(&self, user: usize) -> &[(usize, usize, f64)] {
        &self.rows[user]
    }

    /// Total number of observations (sum of counts).
    pub fn total_count(&self) -> f64 {
        self.rows.iter().flatten().map(|e| e.2).sum()
    }

    fn write_input(&self, user: usize, row: &mut [f64]) {
        let k1 = self.k + 1;
        for j in 0..self.n {
            row[j * k1] = 1.0;
        }
        for &(j, kappa, c) in &self.rows[user] {
            let f = c / self.cell_mass;
            row[j * k1 + kappa] += f;
            row[j * k1] -= f;
        }
    }

    /// Encoded inputs, `B × n(k+1)`.
    pub fn input_batch(&self, users: &[usize]) -> Matrix {
        let mut x = Matrix::zeros(users.len(), self.n * (self.k + 1));
        for (b, &u) in users.iter().enumerate() {
            self.write_input(u, x.row_mut(b));
        }
        x
    }
}

/// Mean per-cell loss for a batch of raw scores and its gradient w.r.t. the
/// scores. Targets are `mass ×` the inputs.
pub fn loss_from_scores(inputs: &TrainingSet, users: &[usize], scores: &Matrix) -> (f64, Matrix) {
    let k1 = inputs.k + 1;
    let cells = (users.len() * inputs.n) as f64;
    let targets = inputs.input_batch(users);
    let mut grad = scores.clone();
    let mut loss = 0.0;
    for (g, w) in grad
        .as_mut_slice()
        .chunks_mut(k1)
        .zip(targets.as_slice().chunks(k1))
    {
        softmax_in_place(g);
        let total: f64 = w.iter().sum::<f64>() * inputs.cell_mass;
        // ∂/∂score_c of −Σ w log softmax = (Σw)·G_c − w_c
        for (gc, wc) in g.iter_mut().zip(w) {
            let wc = wc * inputs.cell_mass;
            loss -= wc * gc.max(LOG_FLOOR).ln();
            *gc = (total * *gc - wc) / cells;
        }
    }
    (loss / cells, grad)
}

/// Mean per-cell reconstruction loss over `users`.
pub fn reconstruction_loss(
    params: &ModelParams,
    inputs: &TrainingSet,
    users: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in users.chunks(64) {
        let trace = forward_batch(params, &inputs.input_batch(chunk))?;
        total += loss_from_scores(inputs, chunk, trace.scores()).0 * chunk.len() as f64;
    }
    Ok(total / users.len().max(1) as f64)
}

/// Loss and gradient of the mean per-cell loss over one batch.
pub fn loss_and_gradient(
    params: &ModelParams,
    inputs: &TrainingSet,
    users: &[usize],
) -> Result<(f64, Gradients)> {
    let input = inputs.input_batch(users);
    let trace = forward_batch(params, &input)?;
    let (loss, dscores) = loss_from_scores(inputs, users, trace.scores());
    let grads = backward_batch(params, &input, &trace, &dscores)?;
    Ok((loss, grads))
}

/// Validation criterion checked at the end of every block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopMetric {
    /// Mean `−log G_{i,j,κ}` over validation entries (lower is better).
    ValidationLoss,
    Rmse,
    /// Recall@50 on validation items (higher is better).
    Recall50,
}

impl StopMetric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, StopMetric::Recall50)
    }

    /// Whether `new` is strictly better than `old`.
    pub fn improves(self, new: f64, old: f64) -> bool {
        if self.higher_is_better() {
            new > old
        } else {
            new < old
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StopMetric::ValidationLoss => "validation-loss",
            StopMetric::Rmse => "rmse",
            StopMetric::Recall50 => "recall@50",
        }
    }
}

impl fmt::Display for StopMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StopMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation-loss" | "loss" => Ok(StopMetric::ValidationLoss),
            "rmse" => Ok(StopMetric::Rmse),
            "recall@50" | "recall50" | "recall" => Ok(StopMetric::Recall50),
            other => Err(Error::invalid(format!(
                "unknown early-stopping metric '{other}' (validation-loss, rmse, recall@50)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub r: usize,
    pub depth: usize,
    pub width: usize,
    pub bias: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs per block; a checkpoint is taken after each block.
    pub epoch_block: usize,
    pub max_blocks: usize,
    pub stop_metric: StopMetric,
    /// L2 penalty on weights (not biases), added to the gradient.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            r: 64,
            depth: 3,
            width: 12,
            bias: false,
            learning_rate: 1e-3,
            batch_size: 64,
            epoch_block: 10,
            max_blocks: 10,
            stop_metric: StopMetric::ValidationLoss,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(msg.to_string()));
        if self.r == 0 || self.depth == 0 || self.width == 0 {
            return bad("r, depth and width must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if self.batch_size == 0 || self.epoch_block == 0 || self.max_blocks == 0 {
            return bad("batch size, epoch block and max blocks must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }

    pub fn architecture(&self, n: usize, k: usize) -> Architecture {
        Architecture {
            n,
            k,
            r: self.r,
            depth: self.depth,
            width: self.width,
            bias: self.bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Early-stopping metric; absent without validation data.
    pub validation: Option<f64>,
}

/// Held-out entries used for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub data: &'a ObservedDataset,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ModelParams,
    optimizers: Vec<NadamState>,
    pub epoch: usize,
    /// Snapshot at the end of each completed block.
    pub checkpoints: Vec<ModelParams>,
    pub history: Vec<EpochRecord>,
    pub block_metrics: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainState {
    pub fn new(config: &TrainConfig, n: usize, k: usize) -> Result<Self> {
        config.validate()?;
        let spec = ModelSpec::standard(&config.architecture(n, k))?;
        let params = init_params(&spec, config.seed);
        Ok(Self::from_params(config, params))
    }

    pub fn from_params(config: &TrainConfig, params: ModelParams) -> Self {
        let opt = NadamConfig {
            learning_rate: config.learning_rate,
            ..NadamConfig::default()
        };
        let optimizers = params
            .tensors()
            .iter()
            .map(|t| NadamState::new(opt, t.rows(), t.cols()))
            .collect();
        TrainState {
            config: config.clone(),
            params,
            optimizers,
            epoch: 0,
            checkpoints: Vec::new(),
            history: Vec::new(),
            block_metrics: Vec::new(),
            stopped_early: false,
        }
    }

    /// One pass over all users in a seeded random order; returns the mean
    /// per-cell training loss.
    pub fn run_epoch(&mut self, inputs: &TrainingSet) -> Result<f64> {
        let mut order: Vec<usize> = (0..inputs.m).collect();
        Rng::derive(self.config.seed, 1000 + self.epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        let mut last_finite = f64::NAN;
        for (step, batch) in order.chunks(self.config.batch_size).enumerate() {
            let (loss, mut grads) = loss_and_gradient(&self.params, inputs, batch)?;
            if !loss.is_finite() || !grads.tensors.iter().all(Matrix::is_finite) {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {}, batch {step}; last finite batch loss {last_finite}",
                    self.epoch + 1
                )));
            }
            last_finite = loss;
            total += loss * batch.len() as f64;
            if self.config.weight_decay > 0.0 {
                let weights = self.weight_mask();
                for ((g, p), is_weight) in grads
                    .tensors
                    .iter_mut()
                    .zip(self.params.tensors())
                    .zip(weights)
                {
                    if is_weight {
                        g.add_scaled(self.config.weight_decay, p)?;
                    }
                }
            }
            for ((p, g), opt) in self
                .params
                .tensors_mut()
                .into_iter()
                .zip(&grads.tensors)
                .zip(&mut self.optimizers)
            {
                opt.step(p, g)?;
            }
        }
        self.epoch += 1;
        Ok(total / inputs.m.max(1) as f64)
    }

    fn weight_mask(&self) -> Vec<bool> {
        self.params
            .encoder
            .iter()
            .chain(&self.params.decoder)
            .flat_map(|p| std::iter::once(true).chain(p.bias.as_ref().map(|_| false)))
            .collect()
    }

    /// Predictions averaged over every stored checkpoint (or the current
    /// parameters if none exist yet).
    pub fn averaged_predictions(
        &self,
        inputs: &TrainingSet,
        scale: &RatingScale,
    ) -> Result<Predictions> {
        let refs: Vec<&ModelParams> = if self.checkpoints.is_empty() {
            vec![&self.params]
        } else {
            self.checkpoints.iter().collect()
        };
        Predictions::from_checkpoints(&refs, inputs, scale)
    }

    pub fn write_history(&self, path: &Path) -> Result<()> {
        write_history(path, &self.history, self.config.stop_metric)
    }
}

/// Evaluates the stopping metric of `params` on validation data.
pub fn validation_metric(
    params: &ModelParams,
    inputs: &TrainingSet,
    scale: &RatingScale,
    validation: &ObservedDataset,
    metric: StopMetric,
) -> Result<f64> {
    let preds = Predictions::from_checkpoints(&[params], inputs, scale)?;
    match metric {
        StopMetric::ValidationLoss => {
            if validation.is_empty() {
                return Err(Error::invalid("validation loss needs validation entries"));
            }
            let total: f64 = validation
                .triples
                .iter()
                .map(|t| -preds.cell(t.user, t.item)[t.rating].max(LOG_FLOOR).ln())
                .sum();
            Ok(total / validation.len() as f64)
        }
        StopMetric::Rmse => rmse(&preds, validation),
        StopMetric::Recall50 => recall_at_k(
            &preds,
            &Exclusions::from_training_set(inputs),
            validation,
            50,
            false,
        ),
    }
}

/// Trains in blocks of `epoch_block` epochs, snapshotting after each block
/// and stopping once a block's validation metric fails to improve on the
/// previous block's (or after `max_blocks`).
pub fn train(
    config: &TrainConfig,
    inputs: &TrainingSet,
    scale: &RatingScale,
    validation: Option<Validation<'_>>,
) -> Result<TrainState> {
    train_with_progress(config, inputs, scale, validation, |_| {})
}

pub fn train_with_progress(
    config: &TrainConfig,
    inputs: &TrainingSet,
    scale: &RatingScale,
    validation: Option<Validation<'_>>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainState> {
    if scale.k() != inputs.k {
        return Err(Error::invalid(format!(
            "scale k = {} but data k = {}",
            scale.k(),
            inputs.k
        )));
    }
    let mut state = TrainState::new(config, inputs.n, inputs.k)?;
    for _ in 0..config.max_blocks {
        let mut metric = None;
        for e in 0..config.epoch_block {
            let train_loss = state.run_epoch(inputs)?;
            let last_of_block = e + 1 == config.epoch_block;
            let validation_value = match validation {
                Some(v) => Some(validation_metric(
                    &state.params,
                    inputs,
                    scale,
                    v.data,
                    config.stop_metric,
                )?),
                None => None,
            };
            if last_of_block {
                metric = validation_value;
            }
            let record = EpochRecord {
                epoch: state.epoch,
                train_loss,
                validation: validation_value,
            };
            progress(&record);
            state.history.push(record);
        }
        state.checkpoints.push(state.params.clone());
        if let Some(value) = metric {
            let previous = state.block_metrics.last().copied();
            state.block_metrics.push(value);
            if let Some(prev) = previous {
                if !config.stop_metric.improves(value, prev) {
                    state.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(state)
}

pub fn write_history(path: &Path, history: &[EpochRecord], metric: StopMetric) -> Result<()> {
    let mut out = String::from("epoch\ttrain_loss\t");
    out.push_str(metric.name());
    out.push('\n');
    for r in history {
        let v = r
            .validation
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.10}"));
        out.push_str(&format!("{}\t{:.10}\t{v}\n", r.epoch, r.train_loss));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// `(tensor, row, col)` of the worst entry.
    pub worst: (usize, usize, usize),
}

/// Central finite differences of the mean loss over `users`, compared with
/// backprop for every parameter. Relative error is
/// `|a − f| / max(|a|, |f|, 1e-6)`.
pub fn gradient_check(
    params: &ModelParams,
    inputs: &TrainingSet,
    users: &[usize],
    h: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_gradient(params, inputs, users)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: (0, 0, 0),
    };
    for (t, g) in grads.tensors.iter().enumerate() {
        for idx in 0..g.len() {
            let orig = probe.tensors()[t].as_slice()[idx];
            probe.tensors_mut()[t].as_mut_slice()[idx] = orig + h;
            let plus = loss_and_gradient(&probe, inputs, users)?.0;
            probe.tensors_mut()[t].as_mut_slice()[idx] = orig - h;
            let minus = loss_and_gradient(&probe, inputs, users)?.0;
            probe.tensors_mut()[t].as_mut_slice()[idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = g.as_slice()[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = (t, idx / g.cols(), idx % g.cols());
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Triple;
    use crate::numerics::Rng;

    fn random_data(m: usize, n: usize, k: usize, density: f64, seed: u64) -> ObservedDataset {
        let mut rng = Rng::new(seed);
        let mut triples = Vec::new();
        for user in 0..m {
            for item in 0..n {
                if rng.uniform() < density {
                    triples.push(Triple {
                        user,
                        item,
                        rating: 1 + rng.index(k),
                    });
                }
            }
        }
        ObservedDataset::from_triples(m, n, RatingScale::integer(k).unwrap(), triples).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            r: 4,
            depth: 3,
            width: 5,
            learning_rate: 1e-2,
            batch_size: 4,
            epoch_block: 3,
            max_blocks: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_hot_loss_matches_direct_cross_entropy() {
        let data = random_data(5, 7, 3, 0.4, 1);
        let inputs = TrainingSet::from_dataset(&data).unwrap();
        assert_eq!(inputs.cell_mass, 1.0);
        let state = TrainState::new(&small_config(), 7, 3).unwrap();
        let users: Vec<usize> = (0..5).collect();
        let loss = reconstruction_loss(&state.params, &inputs, &users).unwrap();
        // independent: −mean log G at the observed channel (0 if unobserved)
        let preds = Predictions::from_checkpoints(&[&state.params], &inputs, &data.scale).unwrap();
        let rows = data.by_user();
        let mut direct = 0.0;
        for (u, row) in rows.iter().enumerate() {
            for j in 0..7 {
                let c = row.iter().find(|e| e.0 == j).map_or(0, |e| e.1);
                direct -= preds.cell(u, j)[c].ln();
            }
        }
        direct /= 35.0;
        assert!((loss - direct).abs() < 1e-12, "{loss} vs {direct}");
    }

    #[test]
    fn repeated_cells_are_count_weighted() {
        let inputs = TrainingSet::from_triples(1, 2, 2, [(0, 0, 1), (0, 0, 1), (0, 0, 2)]).unwrap();
        assert_eq!(inputs.cell_mass, 3.0);
        assert_eq!(inputs.total_count(), 3.0);
        let x = inputs.input_batch(&[0]);
        let third = 1.0 / 3.0;
        let expect = [0.0, 2.0 * third, third, 1.0, 0.0, 0.0];
        for (a, b) in x.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        // uniform scores: loss = Σ_cells Σ_c w_c · ln 3 / cells = (3 + 3)·ln 3 / 2
        let (loss, grad) = loss_from_scores(&inputs, &[0], &Matrix::zeros(1, 6));
        assert!((loss - 3.0 * 3f64.ln()).abs() < 1e-12);
        // item 0: (Σw = 3)·(1/3) − w, halved for the mean over two cells
        assert!((grad.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((grad.get(0, 1) + 0.5).abs() < 1e-12);
        assert!(TrainingSet::from_triples(1, 2, 2, [(0, 2, 1)]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for bias in [false, true] {
            let data = random_data(6, 8, 4, 0.35, 2);
            let inputs = TrainingSet::from_dataset(&data).unwrap();
            let config = TrainConfig {
                bias,
                seed: 3,
                ..small_config()
            };
            let mut state = TrainState::new(&config, 8, 4).unwrap();
            state.run_epoch(&inputs).unwrap();
            // keep biases off ReLU kinks (an all-zero embedding would otherwise
            // put pre-activations exactly at 0)
            let mut rng = Rng::new(9);
            for layer in state
                .params
                .encoder
                .iter_mut()
                .chain(state.params.decoder.iter_mut())
            {
                if let Some(b) = &mut layer.bias {
                    b.as_mut_slice()
                        .iter_mut()
                        .for_each(|v| *v += rng.uniform_range(0.05, 0.1));
                }
            }
            let users: Vec<usize> = (0..6).collect();
            let report = gradient_check(&state.params, &inputs, &users, 1e-5).unwrap();
            assert!(report.checked > 100);
            assert!(report.max_relative_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = random_data(12, 10, 3, 0.3, 4);
        let (train_part, valid): (Vec<_>, Vec<_>) = data
            .triples
            .iter()
            .partition(|t| (t.user + t.item) % 5 != 0);
        let train_data = data.with_triples(train_part);
        let valid_data = data.with_triples(valid);
        let inputs = TrainingSet::from_dataset(&train_data).unwrap();
        let users: Vec<usize> = (0..12).collect();
        let config = small_config();
        let start = TrainState::new(&config, 10, 3).unwrap();
        let before = reconstruction_loss(&start.params, &inputs, &users).unwrap();
        let run = || {
            train(
                &config,
                &inputs,
                &data.scale,
                Some(Validation { data: &valid_data }),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert!(!a.checkpoints.is_empty() && a.checkpoints.len() <= 2);
        assert!(a.history.iter().all(|r| r.validation.is_some()));
        let after = reconstruction_loss(&a.params, &inputs, &users).unwrap();
        assert!(after < before, "{after} !< {before}");
        let preds = a.averaged_predictions(&inputs, &data.scale).unwrap();
        assert_eq!(preds.m(), 12);
    }

    #[test]
    fn early_stop_rule() {
        assert!(StopMetric::ValidationLoss.improves(1.0, 2.0));
        assert!(!StopMetric::Rmse.improves(2.0, 2.0));
        assert!(StopMetric::Recall50.improves(0.6, 0.5));
        assert!(!StopMetric::Recall50.improves(0.5, 0.5));
        for m in [
            StopMetric::ValidationLoss,
            StopMetric::Rmse,
            StopMetric::Recall50,
        ] {
            assert_eq!(m.name().parse::<StopMetric>().unwrap(), m);
        }
        assert!("bogus".parse::<StopMetric>().is_err());
    }

    #[test]
    fn divergence_reports_numerical_error() {
        let data = random_data(4, 5, 2, 0.5, 5);
        let inputs = TrainingSet::from_dataset(&data).unwrap();
        let mut state = TrainState::new(&small_config(), 5, 2).unwrap();
        state.params.decoder[0].weight.fill(f64::NAN);
        match state.run_epoch(&inputs) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("epoch 1")),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn history_is_tab_separated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.tsv");
        let h = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            validation: None,
        }];
        write_history(&path, &h, StopMetric::Rmse).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "epoch\ttrain_loss\trmse");
        assert!(text.contains("1\t0.5000000000\tNA"));
    }
}
