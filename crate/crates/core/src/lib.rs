//! Lottery-ticket experiments under adversarial training.
//!
//! A bias-free masked MLP (Lenet 300-100 by default) is trained with Adam,
//! optionally on a 50/50 mix of natural and FGSM/PGD adversarial examples,
//! then pruned layerwise by weight magnitude. Survivors are rewound to their
//! initialization, redrawn at random, or kept as trained, and the cycle
//! repeats. Everything is `f64` and seeded, so a configuration and a seed
//! reproduce the same metrics bit for bit.

pub mod attacks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod model;
pub mod optim;
pub mod pruning;
pub mod rng;
pub mod tensor;
pub mod training;

pub use attacks::{fgsm, perturb, pgd, AttackConfig, AttackKind};
pub use checkpoint::Checkpoint;
pub use data::{batches, load_split, make_split, Batches, DataSplit, Dataset};
pub use error::{Error, Result};
pub use gradcheck::finite_diff_gradient;
pub use init::glorot_normal_init;
pub use model::{MaskedNetwork, LENET_300_100};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use pruning::{magnitude_prune_layer, next_round_weights, sparsity, PruneRates, PruneRounding, Strategy};
pub use rng::SeededRng;
pub use tensor::{matmul, Tensor};
pub use training::{
    evaluate, run_strategy, run_strategy_with, train_round, EarlyStopResult, EvalRecord, EvalSets, RoundOutput,
    RoundState, SplitMetrics, TrainConfig,
};
