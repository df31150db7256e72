//! Evaluation metrics, RL rewards, rollout admission, the clipped policy
//! objective and power-law fitting.

mod dense;
mod detection;
mod pose;
mod rewards;
mod rl;
mod scaling;

use thiserror::Error;

pub use dense::{ciou, delta1, miou, polygon_iou, rasterize_polygon};
pub use detection::{box_iou, map_coco, nms, nms_multiscale, LabeledBox, ScoredBox, COCO_THRESHOLDS};
pub use pose::{match_pose_by_center, pckh, PckhResult};
pub use rewards::{
    aux_rewards, counting_reward, grounding_reward, levenshtein, parse_count_answer, script_of, task_reward,
    AuxRewards, ExternalJudge, GroundingMode, Payload, RewardConfig, Script, Task,
};
pub use rl::{
    admission, dapo_objective, filter_rollout_groups, kl_metric, population_variance, Admission,
    FilterConfig, RolloutGroup,
};
pub use scaling::{fit_power_law, FitResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("payload does not match task {0}")]
    Contract(String),
    #[error("judge failed: {0}")]
    Judge(String),
}
