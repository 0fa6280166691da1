//! Physics-informed neural networks on implicit Runge-Kutta collocation for
//! semi-explicit index-1 differential-algebraic equations.

pub mod autodiff;
pub mod checkpoint;
pub mod dae;
pub mod error;
pub mod loss;
pub mod network;
pub mod rollout;
pub mod solver;
pub mod tableau;
pub mod tensor;
pub mod train;

mod dd;
mod linalg;

pub use autodiff::{grad_check, Gradients, NodeId, Tape};
pub use checkpoint::{checkpoint_from_text, checkpoint_to_text, load_checkpoint, save_checkpoint};
pub use dae::{
    consistent_z, descriptor_to_semi_explicit, eval_f, eval_g, index1_margin, jacobians,
    DaeJacobians, DescriptorReduction, LinearTestDae, SemiExplicitDae, StatePoint, ThreeBus,
    ThreeBusParams,
};
pub use error::{Error, Result};
pub use loss::{
    dynamic_residual_targets, loss_f, loss_g, physics_loss, physics_loss_nodes, total_loss,
    LossBreakdown, LossNodes,
};
pub use network::{
    init_glorot_normal, Activation, Mode, NetSpec, Network, NetworkConfig, OutputFeature,
    PinnAssembly, StageNodes, StagePrediction,
};
pub use rollout::{
    compare_schemes, evaluate_ensemble, l2_relative_error, simulate, EnsembleReport,
    OracleStagePredictor, RolloutResult, SchemeCurve, StagePredictor,
};
pub use solver::{irk_step, solve, IrkStepResult, SolverConfig, Trajectory, TrajectoryMeta};
pub use tableau::{ButcherTableau, OrderReport, Scheme};
pub use tensor::Tensor;
pub use train::{
    penalty_train, reduce_lr_on_plateau, sample_initial_conditions, train_inner, AdamState,
    EpochRecord, InnerResult, PenaltyTrainState, PlateauConfig, TestRecord, TrainConfig,
};
