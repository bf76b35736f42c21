//! Relationship head: object enrichment, pair features, text and
//! subject-object attention, prediction heads, loss, gradients and training.

pub mod attention;
pub mod backward;
pub mod forward;
pub mod gradcheck;
pub mod loss;
pub mod params;
pub mod train;

pub use attention::{attend, softmax};
pub use backward::{gradients, SceneTarget};
pub use forward::{geometric_quad, Ablation, ForwardTrace, HeadConfig, PairInput, RelationHead, SceneInput};
pub use loss::LossBreakdown;
pub use params::{Dims, LossWeights, ModelParams};
pub use train::{train, TrainConfig, TrainOutcome};
