pub mod buffer;
pub mod evaluate;
pub mod loss;
pub mod normalize;
pub mod train;

pub use buffer::{gae, RolloutBuffer, Transition};
pub use evaluate::evaluate;
pub use loss::{ppo_loss, LossCoefficients, LossOutput, Minibatch};
pub use normalize::RunningStats;
pub use train::{train, CurveRow, PpoConfig, TrainMode, TrainOutcome, TrainReport, TrainState};
