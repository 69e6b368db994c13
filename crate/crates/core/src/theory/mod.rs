//! Executable versions of the generalization theory: layer norms, bound
//! calculators, a Lipschitz probe, the population loss and its minimizer,
//! divergences, and a synthetic recovery experiment.

pub mod bounds;
pub mod lipschitz;
pub mod norms;
pub mod population;
pub mod synth;

pub use bounds::{
    bound_norm_based, bound_param_count, q_bound, tv_bound_report, BoundInputs, TvBoundReport,
};
pub use lipschitz::{decode_with, lipschitz_probe, LipschitzReport};
pub use norms::{
    distance_to_init, layer_norm, layer_norm_kind, norm_2_1_transposed, InitDistance, LayerNormKind,
};
pub use population::{
    bayes_optimal_g, implicit_loss, kl_divergence, normalize_rating_channels,
    pinsker_half_l1_bound, pinsker_l1_bound, population_loss, tv_distance, GroundTruthDistribution,
};
pub use synth::{
    mean_tv_by_size, measured_bound_inputs, sample_dataset, sample_triples, synth_generate,
    tv_recovery_experiment, tv_table, SamplingMode, SynthConfig, SyntheticTruth,
    TvExperimentConfig, TvRow,
};
