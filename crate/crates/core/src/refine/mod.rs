//! Classifiers and explanation-regularized training.

pub mod attribution;
mod checkpoint;
mod loss;
mod model;
mod train;

pub use attribution::{
    integrated_gradients, interaction_score, occlusion, soc_importance, AttributionConfig,
    AttributionReport, Context, Method, PairScore, PhraseScore, ReplacementSet,
};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use loss::{
    distill_loss, kl, l2_transfer_loss, loss_and_grad, reg_losses, total_loss, Example, LossConfig,
    LossParts, Transfer,
};
pub use model::{argmax, masked, Forward, ModelMode, ModelState};
pub use train::{
    build_examples, train_refine, Adam, LabeledSet, Preset, TrainConfig, TrainInputs,
    TrainLogEntry, TrainOutcome, DEFAULT_TRANSFER_LAMBDA,
};
