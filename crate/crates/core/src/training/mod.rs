//! Set matching, losses, the model and its training loop.

mod losses;
mod matching;
mod model;
mod train;

pub use losses::{
    focal_loss, l1_lane_loss, topology_loss, topology_loss_on_tape, topology_targets, LossWeights, TopologyLossForm,
    CLS_FOCAL, FOCAL_ALPHA, FOCAL_GAMMA,
};
pub use matching::{assignment_cost, hungarian_match, match_cost_matrix, solve_assignment, MatchResult};
pub use model::{Forward, HeadKind, Model, ModelConfig, TopologyHead};
pub use train::{
    scene_gradients, scene_objective, steps_per_epoch, train, train_epoch, EpochMetrics, LogRecord, LossBreakdown,
    Sample, TrainConfig,
};
